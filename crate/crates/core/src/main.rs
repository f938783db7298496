use clap::Parser;

fn main() {
    let cli = bvm::cli::Cli::parse();
    std::process::exit(bvm::cli::main_with(cli));
}
