fn main() {
    std::process::exit(gfc_dp_cli::run(std::env::args_os()));
}
