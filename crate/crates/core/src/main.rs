fn main() {
    std::process::exit(blobnet::cli::run(std::env::args_os()));
}
