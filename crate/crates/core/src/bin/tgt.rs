fn main() {
    std::process::exit(tgt_core::cli::main_with_args(std::env::args()));
}
