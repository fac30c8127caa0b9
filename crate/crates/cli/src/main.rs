fn main() {
    std::process::exit(dkgp_cli::main_with_args(std::env::args_os()));
}
