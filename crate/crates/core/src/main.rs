fn main() {
    std::process::exit(odetune_core::cli::run(std::env::args_os()));
}
