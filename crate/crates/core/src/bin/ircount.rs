use clap::Parser;

fn main() {
    if let Err(e) = ircount::cli::run(ircount::cli::Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
