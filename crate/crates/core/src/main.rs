fn main() {
    std::process::exit(patchbatch::cli::run(std::env::args_os()));
}
