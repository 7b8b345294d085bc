use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use tlbo_core::{Phase, Proposal, Session, SessionConfig};

use crate::{load_sources, OrConfig, Outcome};

#[derive(Debug, PartialEq)]
enum Input {
    Quit,
    /// `x` overrides the suggestion; `y = None` marks a failure.
    Measure { x: Option<Vec<f64>>, y: Option<f64> },
}

fn parse_y(s: &str) -> Result<Option<f64>, String> {
    if s.eq_ignore_ascii_case("fail") {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(format!("expected a number or `fail`, got `{s}`")),
    }
}

fn parse_input(line: &str) -> Result<Input, String> {
    let line = line.trim();
    if line.eq_ignore_ascii_case("quit") || line.eq_ignore_ascii_case("q") {
        return Ok(Input::Quit);
    }
    if let Some(rest) = line.strip_prefix("at ") {
        let mut parts = rest.split_whitespace();
        let (Some(xs), Some(y), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err("usage: at x1,..,xn <y|fail>".into());
        };
        let x = xs
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad parameter `{v}`")))
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(Input::Measure {
            x: Some(x),
            y: parse_y(y)?,
        });
    }
    Ok(Input::Measure {
        x: None,
        y: parse_y(line)?,
    })
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", parts.join(", "))
}

pub(crate) fn run(sources: &[PathBuf], cfg: SessionConfig, snapshot: Option<&Path>) -> Outcome {
    let mut session = match snapshot {
        Some(p) if p.exists() => {
            let text = std::fs::read_to_string(p).config_err()?;
            Session::from_json(&text).config_err()?
        }
        _ => Session::create(load_sources(sources)?, cfg).config_err()?,
    };
    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    let mut out = std::io::stdout().lock();
    writeln!(out, "enter measured y, `fail`, `at x1,..,xn <y|fail>` or `quit`").runtime_err()?;

    loop {
        if session.phase() == Phase::Stopped {
            let best = session.best_so_far().map(|b| b.1.to_string()).unwrap_or_default();
            writeln!(out, "stopped after {} measurements, best y = {best}", session.n_observations())
                .runtime_err()?;
            return Ok(());
        }
        let proposal = session.propose().runtime_err()?;
        let n = session.n_observations();
        match &proposal {
            Proposal::Start(x) => writeln!(out, "suggest {n}: x = {} (start point)", fmt_vec(x)),
            Proposal::Suggestion(s) => writeln!(
                out,
                "suggest {n}: x = {} predicted y = {} weights = {}",
                fmt_vec(&s.x),
                s.predicted_y,
                fmt_vec(&s.weights)
            ),
        }
        .runtime_err()?;
        write!(out, "> ").and_then(|_| out.flush()).runtime_err()?;

        let Some(line) = lines.next() else {
            writeln!(out).runtime_err()?;
            return Ok(());
        };
        let line = line.runtime_err()?;
        if line.trim().is_empty() {
            continue;
        }
        let (x, y) = match parse_input(&line) {
            Ok(Input::Quit) => return Ok(()),
            Ok(Input::Measure { x, y }) => (x.unwrap_or_else(|| proposal.x().to_vec()), y),
            Err(msg) => {
                eprintln!("{msg}");
                continue;
            }
        };
        let rec = match session.tell(&x, y, y.is_none()) {
            Ok(r) => r.clone(),
            Err(e) => {
                eprintln!("rejected: {e}");
                continue;
            }
        };
        writeln!(
            out,
            "#{} x = {} y = {}{} best = {}",
            rec.index,
            fmt_vec(&rec.x),
            rec.y,
            if rec.failure { " (failure)" } else { "" },
            rec.best_y
        )
        .runtime_err()?;
        if let Some(p) = snapshot {
            let text = session.to_json().runtime_err()?;
            let tmp = p.with_extension("tmp");
            std::fs::write(&tmp, text)
                .and_then(|_| std::fs::rename(&tmp, p))
                .map_err(|e| anyhow!("saving {}: {e}", p.display()))
                .runtime_err()?;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_inputs() {
        assert_eq!(parse_input(" 12.5 ").unwrap(), Input::Measure { x: None, y: Some(12.5) });
        assert_eq!(parse_input("fail").unwrap(), Input::Measure { x: None, y: None });
        assert_eq!(parse_input("quit").unwrap(), Input::Quit);
        assert_eq!(
            parse_input("at 1,2.5 7").unwrap(),
            Input::Measure {
                x: Some(vec![1.0, 2.5]),
                y: Some(7.0)
            }
        );
        assert_eq!(
            parse_input("at 1 FAIL").unwrap(),
            Input::Measure {
                x: Some(vec![1.0]),
                y: None
            }
        );
        assert!(parse_input("abc").is_err());
        assert!(parse_input("inf").is_err());
        assert!(parse_input("at 1,x 3").is_err());
        assert!(parse_input("at 1").is_err());
    }
}
