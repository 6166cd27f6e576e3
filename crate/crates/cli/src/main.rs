fn main() {
    std::process::exit(hloc::run(std::env::args_os()));
}
