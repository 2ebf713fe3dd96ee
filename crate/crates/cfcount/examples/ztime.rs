use cfcount::cf_dynamics::Alphabet;
use cfcount::zaremba::denominator_set;
use std::time::Instant;
fn main() {
    let a = Alphabet::range(5).unwrap();
    for n in [10_000u64, 100_000, 1_000_000] {
        let t = Instant::now();
        let set = denominator_set(&a, n);
        let d = set.density(n / 2, n).unwrap();
        println!("N={:7}  density[N/2,N]={:.6}  elapsed={:?}", n, d, t.elapsed());
    }
}
