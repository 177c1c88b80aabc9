use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = pragcap_cli::Cli::parse();
    match pragcap_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let chain: Vec<String> = err.chain().map(|e| e.to_string()).collect();
            let report = serde_json::json!({ "error": chain.join(": "), "causes": chain });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
