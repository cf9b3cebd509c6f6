//! Multiply two stored matrices tile by tile and show the stage metrics:
//! each output tile reads one block row and one block column, nothing else.

use densecad::blockops;
use densecad::blockstore::{read_dense, MatrixMeta, Scratch};
use densecad::runtime::Pool;

fn main() -> densecad::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let scratch = Scratch::open(dir.path())?;
    let pool = Pool::new(4)?;
    let (n, p) = (120, 30);

    let a = blockops::from_fn(&pool, &scratch, MatrixMeta::square("a", n, p, false)?, |i, j| {
        ((i * 31 + j * 17) % 11) as f64 - 5.0
    })?;
    let b = blockops::identity(&pool, &scratch, "i", n, p)?;
    let c = blockops::multiply(&pool, &scratch, &a, &b, "c")?;
    assert_eq!(read_dense(&c)?, read_dense(&a)?);

    let x = blockops::DenseVector::ones(n);
    let y = blockops::matvec(&pool, &c, &x)?;
    println!("row sums of A I: first three {:?}", &y[..3]);

    for m in pool.history() {
        println!(
            "{:<10} tasks {:>3}  blocks read {:>4}  written {:>3}  bytes written {:>7}  {:.4}s",
            m.stage, m.tasks, m.blocks_read, m.blocks_written, m.bytes_written, m.wall_time
        );
    }
    Ok(())
}
