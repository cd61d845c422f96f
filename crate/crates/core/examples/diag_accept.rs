use sitgru::cells::ALL_CELL_KINDS;
use sitgru::gradcheck;
use sitgru::seed;

fn main() {
    let seeds: Vec<u64> = (0..20).map(|i| seed::derive(41, &format!("accept.grad.{i}"))).collect();
    for kind in ALL_CELL_KINDS {
        for (i, &s) in seeds.iter().enumerate() {
            let cell = gradcheck::check_cell(kind, s).unwrap();
            let net = gradcheck::check_network(kind, s).unwrap();
            if cell >= 1e-4 || net >= 1e-4 {
                println!("{kind} seed#{i} ({s}): cell {cell:.3e} net {net:.3e}");
            }
        }
    }
    println!("scan done");
}
