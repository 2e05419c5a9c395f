//! Terminal triage: walks the open queue and submits one verdict per event.

use std::io::{BufRead, Write};

use telewatch_core::api::AnomalyItem;
use telewatch_core::verify::{FeedbackSignal, Verdict};

use crate::{Client, ClientError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReviewSummary {
    pub agreed: usize,
    pub disagreed: usize,
    pub skipped: usize,
}

enum Choice {
    Verdict(Verdict),
    Skip,
    Quit,
}

fn parse(line: &str) -> Option<Choice> {
    match line.trim().to_ascii_lowercase().as_str() {
        "a" | "agree" | "y" => Some(Choice::Verdict(Verdict::Agree)),
        "d" | "disagree" | "n" => Some(Choice::Verdict(Verdict::Disagree)),
        "s" | "skip" | "" => Some(Choice::Skip),
        "q" | "quit" => Some(Choice::Quit),
        _ => None,
    }
}

fn describe(item: &AnomalyItem) -> String {
    let e = &item.event;
    format!(
        "{}  {}  error {:.6} / threshold {:.6}  severity {}  proposed {}  status {}",
        e.id,
        e.key,
        e.error,
        e.threshold,
        e.severity.map(|s| s.as_str()).unwrap_or("-"),
        e.proposed_action.map(|a| a.as_str()).unwrap_or("-"),
        e.status
    )
}

/// Prompts for each open event of `run` (or of all runs). Events that come
/// back open after an information request are offered again in the next
/// pass; a blank line skips, `q` stops.
pub async fn review<R: BufRead, W: Write>(
    client: &Client,
    run: Option<&str>,
    operator: &str,
    mut input: R,
    mut out: W,
) -> Result<ReviewSummary, ClientError> {
    let mut summary = ReviewSummary::default();
    let mut skipped = std::collections::HashSet::new();
    loop {
        let queue: Vec<AnomalyItem> = client
            .pending(run)
            .await?
            .into_iter()
            .filter(|i| !skipped.contains(&i.event.id))
            .collect();
        if queue.is_empty() {
            let _ = writeln!(out, "queue empty");
            return Ok(summary);
        }
        for item in queue {
            let _ = writeln!(out, "{}", describe(&item));
            let choice = loop {
                let _ = write!(out, "[a]gree / [d]isagree / [s]kip / [q]uit > ");
                let _ = out.flush();
                let mut line = String::new();
                if input.read_line(&mut line).unwrap_or(0) == 0 {
                    break Choice::Quit;
                }
                match parse(&line) {
                    Some(c) => break c,
                    None => {
                        let _ = writeln!(out, "unrecognised answer");
                    }
                }
            };
            match choice {
                Choice::Quit => return Ok(summary),
                Choice::Skip => {
                    summary.skipped += 1;
                    skipped.insert(item.event.id.clone());
                }
                Choice::Verdict(v) => {
                    let signal = FeedbackSignal::new(v, operator);
                    let resp = client.submit_feedback(&item.event.id, &signal).await?;
                    match v {
                        Verdict::Agree => summary.agreed += 1,
                        Verdict::Disagree => summary.disagreed += 1,
                    }
                    let _ = writeln!(
                        out,
                        "  -> {} (Q[{}][{}] {:+.4})",
                        resp.status, resp.update.state, resp.update.action, resp.update.delta
                    );
                }
            }
        }
    }
}
