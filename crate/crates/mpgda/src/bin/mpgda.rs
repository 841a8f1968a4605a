fn main() {
    std::process::exit(mpgda::cli::main_with_args(std::env::args_os()));
}
