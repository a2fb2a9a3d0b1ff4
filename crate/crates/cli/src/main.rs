fn main() {
    fce3d_cli::run()
}
