fn main() {
    std::process::exit(dttd_harness::cli::main_with_args(std::env::args_os()));
}
