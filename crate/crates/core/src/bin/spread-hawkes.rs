fn main() {
    std::process::exit(spread_hawkes::cli::main_with_args(std::env::args_os()));
}
