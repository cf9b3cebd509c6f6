//! Load a CSV edge list into block storage and inspect the result.

use densecad::blockops;
use densecad::blockstore::{read_dense, Scratch};
use densecad::ingest;
use densecad::runtime::Pool;

const EDGES: &str = "\
# i,j,weight
0,1,4.0
1,2,1.5
2,3,1.0
0,1,1.0
3,0,0.5
";

fn main() -> densecad::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let scratch = Scratch::open(dir.path())?;
    let pool = Pool::new(1)?;

    let a = ingest::ingest(&pool, &scratch, EDGES.as_bytes(), 4, 2, "square")?;
    for row in read_dense(&a)?.chunks(4) {
        println!("{row:?}");
    }
    println!("degrees {:?}", blockops::degrees(&pool, &a)?.entries());

    match ingest::ingest(&pool, &scratch, "0,1,1\n2,2,1\n".as_bytes(), 4, 2, "bad") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!("self-loops are refused"),
    }
    Ok(())
}
