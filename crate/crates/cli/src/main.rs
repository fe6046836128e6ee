fn main() {
    std::process::exit(ssbm_sim::main_with_args(std::env::args_os()));
}
