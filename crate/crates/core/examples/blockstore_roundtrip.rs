//! Write a tiled matrix to disk, read it back, and catch a corrupted block.

use densecad::blockstore::{self, Block, BlockId, MatrixMeta, Scratch};

fn main() -> densecad::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let scratch = Scratch::open(dir.path())?;

    // 10x10 in 4x4 tiles: the last tile row and column are ragged.
    let meta = MatrixMeta::square("m", 10, 4, false)?;
    let values: Vec<f64> = (0..100).map(|i| i as f64 / 7.0).collect();
    let h = blockstore::write_dense(scratch.root(), meta, &values)?;
    println!("{} blocks under {}", h.meta.block_ids().len(), h.root.display());

    let back = blockstore::read_dense(&h)?;
    assert_eq!(back, values);
    let corner: Block = blockstore::read_block(&h, BlockId::new(2, 2))?;
    println!("corner block is {}x{}: {:?}", corner.rows(), corner.cols(), corner.values());

    // Flip one payload byte behind the store's back.
    let path = h.block_path(BlockId::new(0, 1));
    let mut bytes = std::fs::read(&path).expect("block file");
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    std::fs::write(&path, bytes).expect("rewrite");
    let report = blockstore::validate(&h);
    println!("clean after tampering: {}", report.is_clean());
    println!("{report:?}");
    Ok(())
}
