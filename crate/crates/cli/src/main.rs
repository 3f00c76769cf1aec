use clap::Parser;

fn main() {
    std::process::exit(kpcm_cli::run(kpcm_cli::Cli::parse()));
}
