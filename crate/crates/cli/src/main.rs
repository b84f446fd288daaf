use clap::Parser;

fn main() {
    let cli = dig_cli::Cli::parse();
    std::process::exit(dig_cli::run(cli));
}
