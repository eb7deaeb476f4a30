mod common;

use avar_core::dump::{read_dump, write_dump, MAGIC};
use avar_core::rng::SeededRng;
use avar_core::Error;

#[test]
fn fifty_random_dumps_round_trip_byte_identically() {
    let mut rng = SeededRng::new(12);
    for i in 0..50 {
        let (a, seg) = common::random_case(&mut rng);
        let id = format!("sample-{i}");
        let bytes = write_dump(&a, &seg, (i % 2 == 0).then_some(id.as_str())).unwrap();
        let back = read_dump(&bytes).unwrap();
        let again = write_dump(&back.attention, &back.segmentation, back.sample_id.as_deref()).unwrap();
        assert_eq!(bytes, again);
    }
}

#[test]
fn corrupted_inputs_are_rejected() {
    let mut rng = SeededRng::new(13);
    let (a, seg) = common::random_case(&mut rng);
    let good = write_dump(&a, &seg, None).unwrap();

    let mut bad_magic = good.clone();
    bad_magic[0] ^= 0xff;
    assert!(matches!(read_dump(&bad_magic), Err(Error::BadMagic { .. })));
    assert!(matches!(read_dump(&good[..4]), Err(Error::BadMagic { .. })));

    assert!(matches!(read_dump(&good[..MAGIC.len() + 2]), Err(Error::LengthMismatch { .. })));
    assert!(matches!(read_dump(&good[..good.len() - 4]), Err(Error::LengthMismatch { .. })));
    let mut long = good.clone();
    long.extend_from_slice(&[0; 4]);
    assert!(matches!(read_dump(&long), Err(Error::LengthMismatch { .. })));

    let mut huge_header = good.clone();
    huge_header[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
    assert!(matches!(read_dump(&huge_header), Err(Error::LengthMismatch { .. })));

    let mut bad_json = good.clone();
    bad_json[12] = b'[';
    assert!(matches!(read_dump(&bad_json), Err(Error::HeaderParse(_))));
}
