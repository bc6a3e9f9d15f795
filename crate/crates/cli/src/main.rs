fn main() {
    std::process::exit(lvm_cli::run(std::env::args_os()));
}
