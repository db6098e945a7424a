use genre_bench::{conv_operands, generator_input, random_image, small_dataset, trainer_and_sample};

#[test]
fn fixtures_are_consistent() {
    assert_eq!(random_image(8, 6, 1), random_image(8, 6, 1));
    let (x, w, b) = conv_operands(3, 5, 9, 7);
    assert_eq!((x.dim(), w.dim(), b.len()), ((1, 3, 9, 7), (5, 3, 3, 3), 5));

    let data = small_dataset();
    let (gen, k0, mask) = generator_input(&data);
    let (a, _, h, w) = k0.dim();
    assert_eq!(mask.dim(), (a, h, w));
    let (trace, _) = gen.forward(&k0, &mask).unwrap();
    assert_eq!(trace.final_image().dim(), (h, w));

    let (mut trainer, sample) = trainer_and_sample(&data);
    let record = trainer.train_iteration(&sample).unwrap();
    assert_eq!(record.iteration, 0);
}
