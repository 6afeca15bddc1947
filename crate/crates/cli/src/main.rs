fn main() {
    println!("sivor: under construction");
}
