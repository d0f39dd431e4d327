fn main() {
    std::process::exit(ccstat::cli::main_with_args(std::env::args_os()));
}
