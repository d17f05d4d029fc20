fn main() {
    std::process::exit(ssi_core::cli::main_with_args(std::env::args_os()));
}
