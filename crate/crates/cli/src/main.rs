fn main() {
    std::process::exit(pipcdr_cli::main_with_args(std::env::args_os()));
}
