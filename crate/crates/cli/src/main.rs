fn main() {
    std::process::exit(tpn_cli::main_with(std::env::args_os()));
}
