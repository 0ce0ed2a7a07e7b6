use std::fs::File;
use std::io::{BufReader, BufWriter};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rkhs_reg::bench::FeatureSource;
use rkhs_reg::features::{handcrafted_features, read_weights, write_weights, EncoderWeights};
use rkhs_reg::geometry::{rotation_error_deg, translation_error};
use rkhs_reg::io::{
    load_cloud, load_shape, mesh_normalization, read_pose_json, save_ply, write_pose_json,
    PoseRecord, Shape,
};
use rkhs_reg::registration::{register, RegistrationConfig};
use rkhs_reg::{Pose, Vec3};

const TENT_OFF: &str = "OFF
5 6 0
0 0 0
2 0 0
2 1 0
0 1 0
1 0.5 1.2
3 0 2 1
3 0 3 2
3 0 1 4
3 1 2 4
3 2 3 4
3 3 0 4
";

#[test]
fn mesh_file_to_registered_pose_file() {
    let dir = tempfile::tempdir().unwrap();
    let off = dir.path().join("tent.off");
    std::fs::write(&off, TENT_OFF).unwrap();

    let Shape::Mesh(mesh) = load_shape(&off, None).unwrap() else {
        panic!("OFF loads as a mesh");
    };
    assert_eq!((mesh.vertices.len(), mesh.triangles.len()), (5, 6));
    let norm = mesh_normalization(&mesh);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = norm.apply_cloud(&load_cloud(&off, 600, &mut rng).unwrap());
    let ply = dir.path().join("x.ply");
    save_ply(&ply, &x).unwrap();
    let x_back = load_cloud(&ply, 0, &mut rng).unwrap();
    assert_eq!(x_back.points(), x.points());

    let truth = Pose::new(
        Pose::from_axis_angle(&Vec3::new(1.0, 2.0, -0.5).normalize(), 15f64.to_radians()).rotation,
        Vec3::new(0.03, -0.02, 0.05),
    );
    let z = x_back.transformed(&truth.inverse());
    let fx = handcrafted_features(&x_back, 16, 1).unwrap();
    let fz = handcrafted_features(&z, 16, 1).unwrap();
    let result = register(&fx, &fz, &RegistrationConfig::default()).unwrap();
    assert!(rotation_error_deg(&result.pose, &truth) < 0.5);
    assert!(translation_error(&result.pose, &truth) < 0.01);

    let mut record = PoseRecord::from_pose(&result.pose);
    record.final_ell = Some(result.final_ell);
    let json = dir.path().join("pose.json");
    write_pose_json(&json, &record).unwrap();
    let back = read_pose_json(&json).unwrap();
    assert_eq!(back, record);
    let p = back.pose();
    assert!((p.rotation - result.pose.rotation).amax() < 1e-12);
    assert!((p.translation - result.pose.translation).amax() < 1e-12);
}

#[test]
fn encoder_weights_file_gives_identical_features() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let weights = EncoderWeights::random(&[1, 4, 6], 8, &mut rng);
    let path = dir.path().join("w.bin");
    write_weights(BufWriter::new(File::create(&path).unwrap()), &weights).unwrap();
    let loaded = read_weights(BufReader::new(File::open(&path).unwrap())).unwrap();
    assert_eq!(loaded, weights);

    let cloud = rkhs_reg::bench::BenchShape::procedural("mug")
        .unwrap()
        .sample(200, &mut rng)
        .unwrap();
    let a = FeatureSource::Encoder(weights.into()).features(&cloud).unwrap();
    let b = FeatureSource::Encoder(loaded.into()).features(&cloud).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.n_channels(), 6);
}
