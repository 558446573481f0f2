fn main() {
    std::process::exit(sudf_cli::args::run_cli(std::env::args_os()));
}
