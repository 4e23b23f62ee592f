use clap::Parser;

fn main() {
    let cli = mfglab::cli::Cli::parse();
    std::process::exit(mfglab::cli::execute(cli));
}
