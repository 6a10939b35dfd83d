use laser_core::ImageBuffer;
use laser_toyvlm::{ToyVlm64, ToyVlmConfig};
use proptest::prelude::*;

fn image(w: u32, h: u32, bytes: &[u8]) -> ImageBuffer {
    let data = (0..(w * h * 3) as usize).map(|i| bytes[i % bytes.len()]).collect();
    ImageBuffer::from_rgb(w, h, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_is_normalized_and_cache_is_consistent(
        seed in 0u64..1000,
        w in 8u32..64,
        h in 8u32..64,
        bytes in prop::collection::vec(any::<u8>(), 1..64),
        query in "[a-z ?]{0,12}",
        next in 3usize..64,
    ) {
        let m = ToyVlm64::new(ToyVlmConfig { seed, ..Default::default() }).unwrap();
        let img = image(w, h, &bytes);
        let prompt = m.prompt(m.tokenize_image(&img).unwrap().embeddings, &query);
        let mut pre = m.forward_prefill(&prompt).unwrap();
        let n = pre.layout.total_len();
        for row in pre.full_attention.chunks_exact(n) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
        prop_assert!(pre.visual_attention.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let step = m.decode_step(&mut pre.cache, next).unwrap();
        let mut longer = prompt.clone();
        longer.answer_prefix.push(next);
        let full = m.forward_prefill(&longer).unwrap().logits;
        for (a, b) in step.iter().zip(&full) {
            prop_assert!((a - b).abs() <= 1e-5);
        }
    }
}
