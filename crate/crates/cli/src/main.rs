use clap::Parser;

use fracforms::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            println!("{}", out.summary);
            for f in &out.files {
                println!("wrote {}", f.display());
            }
        }
        Err(e) => {
            eprintln!("fracforms {}: {e}", cli.command.name());
            std::process::exit(e.exit_code());
        }
    }
}
