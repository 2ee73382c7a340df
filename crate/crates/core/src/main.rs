fn main() {
    std::process::exit(noisecodec::cli::run(std::env::args_os()));
}
