fn main() {
    std::process::exit(conefrac_cli::main_with_args(std::env::args_os()));
}
