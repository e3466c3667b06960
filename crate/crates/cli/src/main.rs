use clap::Parser;

use mgan_pipeline::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let mut progress = |line: &str| eprintln!("{line}");
    match run(&cli.command, &mut progress) {
        Ok(dir) => eprintln!("run directory: {}", dir.display()),
        Err(e) => {
            eprintln!("mgan {}: {e}", cli.command.name());
            std::process::exit(e.code);
        }
    }
}
