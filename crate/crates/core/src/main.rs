use clap::Parser;

fn main() {
    let cli = imopt::cli::Cli::parse();
    std::process::exit(imopt::cli::main_with(cli));
}
