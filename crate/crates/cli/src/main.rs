use clap::Parser;

fn main() {
    match dtnet_cli::run(dtnet_cli::Cli::parse()) {
        Ok((text, code)) => {
            print!("{text}");
            std::process::exit(code);
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}
