use clap::Parser;
use rbmd::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    if let Some(n) = cli.command.args().threads {
        configure_threads(n);
    }
    match execute(&cli.command) {
        Ok(status) => println!("{status}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

#[cfg(feature = "parallel")]
fn configure_threads(n: usize) {
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

#[cfg(not(feature = "parallel"))]
fn configure_threads(_: usize) {}
