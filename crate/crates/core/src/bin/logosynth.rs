fn main() {
    std::process::exit(logosynth::cli::run(std::env::args_os()));
}
