use clap::Parser;
use stegolab_cli::config::Cli;
use stegolab_cli::exit;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: usage: STEGOLAB_THREADS / --threads must be positive");
            std::process::exit(exit::USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            std::process::exit(exit::INPUT);
        }
    }
    std::process::exit(stegolab_cli::run(&cli.command));
}
