fn main() {
    std::process::exit(splitkit::harness::run(std::env::args_os()));
}
