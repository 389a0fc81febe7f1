use clap::error::ErrorKind;
use clap::Parser;
use thp::cli::{run, Cli};
use thp::exit;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => exit::OK,
                _ => exit::USAGE,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("thp: {e}");
        std::process::exit(e.exit_code());
    }
}
