use std::io::Write;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("DATOC_LOG")).init();
    let out = datoc_cli::run_args(std::env::args_os());
    print!("{}", out.stdout);
    eprint!("{}", out.stderr);
    let _ = std::io::stdout().flush();
    std::process::exit(out.code);
}
