//! "Did you mean" hints for unknown names on the command line and in configs.

fn levenshtein(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != *cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Formats an "unknown name" message listing the valid choices, closest first.
pub fn unknown(kind: &str, given: &str, valid: &[&str]) -> String {
    let mut ranked: Vec<(usize, &str)> = valid.iter().map(|v| (levenshtein(given, v), *v)).collect();
    ranked.sort();
    let mut msg = format!("unknown {kind} `{given}`");
    if let Some((d, best)) = ranked.first() {
        if *d <= 3 {
            msg.push_str(&format!(" (did you mean `{best}`?)"));
        }
    }
    msg.push_str(&format!("; valid values: {}", valid.join(", ")));
    msg
}
