fn main() {
    std::process::exit(bilinear_dof::cli::main_with_args(std::env::args_os()));
}
