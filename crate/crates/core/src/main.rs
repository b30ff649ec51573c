fn main() {
    std::process::exit(streamkmeans::cli::main_with_args(std::env::args_os()));
}
