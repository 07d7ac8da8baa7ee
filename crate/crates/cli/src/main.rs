use clap::Parser;

fn main() {
    let cli = rauq_cli::Cli::parse();
    let code = rauq_cli::run(cli, &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    std::process::exit(code);
}
