use clap::Parser;
use hec_core::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        // One machine-parsable error line on stderr.
        let line = serde_json::json!({
            "error": e.to_string(),
            "cause": e.root_cause().to_string(),
        });
        eprintln!("{line}");
        std::process::exit(1);
    }
}
