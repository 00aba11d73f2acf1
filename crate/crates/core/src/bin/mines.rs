use clap::Parser;

fn main() {
    let cli = mines_core::cli::Cli::parse();
    if let Err(e) = mines_core::cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
