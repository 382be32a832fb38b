//! Batch command-line front end for matrix-variate regression.

mod config;
mod run;

use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args.iter().any(|a| a == "--help" || a == "-h") {
        print!("{}", config::USAGE);
        return ExitCode::from(if args.is_empty() { 2 } else { 0 });
    }

    let parsed = match config::parse_args(&args) {
        Ok(cfg) => cfg,
        Err(message) => {
            let doc = serde_json::json!({"error": {"code": "usage", "message": message}});
            eprintln!("{}", config::USAGE);
            println!("{}", serde_json::to_string_pretty(&doc).expect("serialize"));
            return ExitCode::from(2);
        }
    };

    match run::dispatch(&parsed) {
        Ok(document) => {
            let text = format!(
                "{}\n",
                serde_json::to_string_pretty(&document).expect("serialize")
            );
            match &parsed.out {
                Some(path) => {
                    if let Err(e) = std::fs::write(path, &text) {
                        eprintln!("cannot write {}: {e}", path.display());
                        return ExitCode::from(3);
                    }
                }
                None => print!("{text}"),
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            let text = format!(
                "{}\n",
                serde_json::to_string_pretty(&err.document).expect("serialize")
            );
            if let Some(path) = &parsed.out {
                let _ = std::fs::write(path, &text);
            }
            print!("{text}");
            ExitCode::from(err.exit_code as u8)
        }
    }
}
