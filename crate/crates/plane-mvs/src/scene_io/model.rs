//! Sparse SfM model: the standard text triplet (cameras.txt, images.txt,
//! points3D.txt) with cross-linked tracks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};

use super::SceneError;
use crate::geometry::Camera;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraKind {
    Pinhole,
    SimplePinhole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraIntrinsics {
    pub id: u32,
    pub kind: CameraKind,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// One 2D feature on an image, optionally linked to a 3D point.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: f64,
    pub y: f64,
    pub point3d: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMeta {
    pub id: u32,
    pub camera_id: u32,
    pub name: String,
    /// World-to-camera rotation as a unit quaternion (w, x, y, z).
    pub qvec: [f64; 4],
    pub tvec: Vector3<f64>,
    pub observations: Vec<Observation>,
}

impl ImageMeta {
    pub fn rotation(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.qvec;
        let q = nalgebra::Quaternion::new(w, x, y, z);
        nalgebra::UnitQuaternion::from_quaternion(q)
            .to_rotation_matrix()
            .into_inner()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point3D {
    pub id: u64,
    pub position: Vector3<f64>,
    pub color: [u8; 3],
    pub reproj_error: f64,
    /// (image id, observation index) pairs; always at least two entries.
    pub track: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseModel {
    pub cameras: BTreeMap<u32, CameraIntrinsics>,
    pub images: BTreeMap<u32, ImageMeta>,
    pub points: BTreeMap<u64, Point3D>,
}

impl SparseModel {
    /// Full camera (intrinsics + pose) for an image id.
    pub fn camera(&self, image_id: u32) -> Option<Camera> {
        let meta = self.images.get(&image_id)?;
        let intr = self.cameras.get(&meta.camera_id)?;
        Some(Camera {
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
            r: meta.rotation(),
            t: meta.tvec,
            width: intr.width,
            height: intr.height,
        })
    }

    /// Mean track length over all points; zero for an empty model.
    pub fn mean_track_length(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        let total: usize = self.points.values().map(|p| p.track.len()).sum();
        total as f64 / self.points.len() as f64
    }

    /// Model matching images downsampled to `⌈w/2⌉ x ⌈h/2⌉`: intrinsics and
    /// observation coordinates are rescaled under the pixel-center
    /// convention; 3D points are untouched.
    pub fn half_scale(&self) -> SparseModel {
        let mut out = self.clone();
        let mut ratios: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
        for cam in out.cameras.values_mut() {
            let nw = cam.width.div_ceil(2);
            let nh = cam.height.div_ceil(2);
            let rx = nw as f64 / cam.width as f64;
            let ry = nh as f64 / cam.height as f64;
            cam.fx *= rx;
            cam.fy *= ry;
            cam.cx = (cam.cx + 0.5) * rx - 0.5;
            cam.cy = (cam.cy + 0.5) * ry - 0.5;
            cam.width = nw;
            cam.height = nh;
            ratios.insert(cam.id, (rx, ry));
        }
        for img in out.images.values_mut() {
            let (rx, ry) = ratios[&img.camera_id];
            for obs in &mut img.observations {
                obs.x = (obs.x + 0.5) * rx - 0.5;
                obs.y = (obs.y + 0.5) * ry - 0.5;
            }
        }
        out
    }

    /// Serializes the model back into the text triplet inside `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), SceneError> {
        std::fs::create_dir_all(dir)?;
        let mut cams = String::from("# CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]\n");
        for cam in self.cameras.values() {
            match cam.kind {
                CameraKind::Pinhole => writeln!(
                    cams,
                    "{} PINHOLE {} {} {} {} {} {}",
                    cam.id, cam.width, cam.height, cam.fx, cam.fy, cam.cx, cam.cy
                ),
                CameraKind::SimplePinhole => writeln!(
                    cams,
                    "{} SIMPLE_PINHOLE {} {} {} {} {}",
                    cam.id, cam.width, cam.height, cam.fx, cam.cx, cam.cy
                ),
            }
            .expect("writing to string cannot fail");
        }
        std::fs::write(dir.join("cameras.txt"), cams)?;

        let mut imgs =
            String::from("# IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n# X Y POINT3D_ID\n");
        for img in self.images.values() {
            writeln!(
                imgs,
                "{} {} {} {} {} {} {} {} {} {}",
                img.id,
                img.qvec[0],
                img.qvec[1],
                img.qvec[2],
                img.qvec[3],
                img.tvec.x,
                img.tvec.y,
                img.tvec.z,
                img.camera_id,
                img.name
            )
            .expect("writing to string cannot fail");
            let mut parts = Vec::with_capacity(img.observations.len());
            for obs in &img.observations {
                let id = obs.point3d.map(|p| p as i64).unwrap_or(-1);
                parts.push(format!("{} {} {}", obs.x, obs.y, id));
            }
            imgs.push_str(&parts.join(" "));
            imgs.push('\n');
        }
        std::fs::write(dir.join("images.txt"), imgs)?;

        let mut pts =
            String::from("# POINT3D_ID X Y Z R G B ERROR TRACK[] as (IMAGE_ID POINT2D_IDX)\n");
        for p in self.points.values() {
            write!(
                pts,
                "{} {} {} {} {} {} {} {}",
                p.id,
                p.position.x,
                p.position.y,
                p.position.z,
                p.color[0],
                p.color[1],
                p.color[2],
                p.reproj_error
            )
            .expect("writing to string cannot fail");
            for (img, idx) in &p.track {
                write!(pts, " {} {}", img, idx).expect("writing to string cannot fail");
            }
            pts.push('\n');
        }
        std::fs::write(dir.join("points3D.txt"), pts)?;
        Ok(())
    }
}

/// Parses the text triplet from `dir` into a cross-linked [`SparseModel`].
pub fn parse_sparse_model(dir: &Path) -> Result<SparseModel, SceneError> {
    let cameras = parse_cameras(&dir.join("cameras.txt"))?;
    let images = parse_images(&dir.join("images.txt"))?;
    let points = parse_points(&dir.join("points3D.txt"))?;
    let model = SparseModel {
        cameras,
        images,
        points,
    };
    validate_links(&model)?;
    Ok(model)
}

fn validate_links(model: &SparseModel) -> Result<(), SceneError> {
    for img in model.images.values() {
        if !model.cameras.contains_key(&img.camera_id) {
            return Err(SceneError::Link(format!(
                "image {} references unknown camera {}",
                img.id, img.camera_id
            )));
        }
        for (i, obs) in img.observations.iter().enumerate() {
            if let Some(pid) = obs.point3d {
                if !model.points.contains_key(&pid) {
                    return Err(SceneError::Link(format!(
                        "image {} observation {} links to unknown point {}",
                        img.id, i, pid
                    )));
                }
            }
        }
    }
    for p in model.points.values() {
        for &(img_id, obs_idx) in &p.track {
            let img = model.images.get(&img_id).ok_or_else(|| {
                SceneError::Link(format!(
                    "point {} track references unknown image {}",
                    p.id, img_id
                ))
            })?;
            if obs_idx as usize >= img.observations.len() {
                return Err(SceneError::Link(format!(
                    "point {} track references observation {} of image {} which has only {}",
                    p.id,
                    obs_idx,
                    img_id,
                    img.observations.len()
                )));
            }
        }
    }
    Ok(())
}

fn open_lines(path: &Path) -> Result<Vec<(usize, String)>, SceneError> {
    let file = std::fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            SceneError::FileMissing(path.to_path_buf())
        } else {
            SceneError::Io(e)
        }
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        out.push((i + 1, line?));
    }
    Ok(out)
}

fn parse_num<T: FromStr>(tok: &str, path: &Path, line: usize, what: &str) -> Result<T, SceneError>
where
    T::Err: std::fmt::Display,
{
    tok.parse()
        .map_err(|e| SceneError::parse(path, line, format!("invalid {what} '{tok}': {e}")))
}

fn parse_cameras(path: &Path) -> Result<BTreeMap<u32, CameraIntrinsics>, SceneError> {
    let mut cameras = BTreeMap::new();
    for (line_no, line) in open_lines(path)? {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = trimmed.split_whitespace().collect();
        if tok.len() < 4 {
            return Err(SceneError::parse(path, line_no, "expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]"));
        }
        let id: u32 = parse_num(tok[0], path, line_no, "camera id")?;
        let width: usize = parse_num(tok[2], path, line_no, "width")?;
        let height: usize = parse_num(tok[3], path, line_no, "height")?;
        let params: Vec<f64> = tok[4..]
            .iter()
            .map(|t| parse_num(t, path, line_no, "camera parameter"))
            .collect::<Result<_, _>>()?;
        let (kind, fx, fy, cx, cy) = match tok[1] {
            "PINHOLE" => {
                if params.len() != 4 {
                    return Err(SceneError::parse(path, line_no, "PINHOLE expects 4 parameters (fx fy cx cy)"));
                }
                (CameraKind::Pinhole, params[0], params[1], params[2], params[3])
            }
            "SIMPLE_PINHOLE" => {
                if params.len() != 3 {
                    return Err(SceneError::parse(path, line_no, "SIMPLE_PINHOLE expects 3 parameters (f cx cy)"));
                }
                (CameraKind::SimplePinhole, params[0], params[0], params[1], params[2])
            }
            other => {
                return Err(SceneError::parse(path, line_no, format!("unsupported camera model '{other}' (only PINHOLE and SIMPLE_PINHOLE are accepted)")));
            }
        };
        if cameras.insert(id, CameraIntrinsics { id, kind, width, height, fx, fy, cx, cy }).is_some() {
            return Err(SceneError::parse(path, line_no, format!("duplicate camera id {id}")));
        }
    }
    Ok(cameras)
}

fn parse_images(path: &Path) -> Result<BTreeMap<u32, ImageMeta>, SceneError> {
    let lines = open_lines(path)?;
    let mut images = BTreeMap::new();
    let mut iter = lines.into_iter().peekable();
    while let Some((line_no, line)) = iter.next() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = trimmed.split_whitespace().collect();
        if tok.len() < 10 {
            return Err(SceneError::parse(path, line_no, "expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME"));
        }
        let id: u32 = parse_num(tok[0], path, line_no, "image id")?;
        let mut q = [0.0; 4];
        for (i, slot) in q.iter_mut().enumerate() {
            *slot = parse_num(tok[1 + i], path, line_no, "quaternion component")?;
        }
        let tvec = Vector3::new(
            parse_num(tok[5], path, line_no, "translation")?,
            parse_num(tok[6], path, line_no, "translation")?,
            parse_num(tok[7], path, line_no, "translation")?,
        );
        let camera_id: u32 = parse_num(tok[8], path, line_no, "camera id")?;
        let name = tok[9..].join(" ");

        let (obs_line_no, obs_line) = iter.next().ok_or_else(|| {
            SceneError::parse(path, line_no, format!("image {id} is missing its observations line"))
        })?;
        let obs_tok: Vec<&str> = obs_line.split_whitespace().collect();
        if obs_tok.len() % 3 != 0 {
            return Err(SceneError::parse(path, obs_line_no, "observations must be X Y POINT3D_ID triplets"));
        }
        let mut observations = Vec::with_capacity(obs_tok.len() / 3);
        for chunk in obs_tok.chunks(3) {
            let x: f64 = parse_num(chunk[0], path, obs_line_no, "observation x")?;
            let y: f64 = parse_num(chunk[1], path, obs_line_no, "observation y")?;
            let pid: i64 = parse_num(chunk[2], path, obs_line_no, "point3d id")?;
            observations.push(Observation {
                x,
                y,
                point3d: (pid >= 0).then_some(pid as u64),
            });
        }
        if images
            .insert(id, ImageMeta { id, camera_id, name, qvec: q, tvec, observations })
            .is_some()
        {
            return Err(SceneError::parse(path, line_no, format!("duplicate image id {id}")));
        }
    }
    Ok(images)
}

fn parse_points(path: &Path) -> Result<BTreeMap<u64, Point3D>, SceneError> {
    let mut points = BTreeMap::new();
    for (line_no, line) in open_lines(path)? {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = trimmed.split_whitespace().collect();
        if tok.len() < 8 {
            return Err(SceneError::parse(path, line_no, "expected POINT3D_ID X Y Z R G B ERROR TRACK[]"));
        }
        let id: u64 = parse_num(tok[0], path, line_no, "point id")?;
        let position = Vector3::new(
            parse_num(tok[1], path, line_no, "coordinate")?,
            parse_num(tok[2], path, line_no, "coordinate")?,
            parse_num(tok[3], path, line_no, "coordinate")?,
        );
        let color = [
            parse_num::<u8>(tok[4], path, line_no, "color")?,
            parse_num::<u8>(tok[5], path, line_no, "color")?,
            parse_num::<u8>(tok[6], path, line_no, "color")?,
        ];
        let reproj_error: f64 = parse_num(tok[7], path, line_no, "reprojection error")?;
        let rest = &tok[8..];
        if rest.len() % 2 != 0 {
            return Err(SceneError::parse(path, line_no, "track must be IMAGE_ID POINT2D_IDX pairs"));
        }
        let mut track = Vec::with_capacity(rest.len() / 2);
        for chunk in rest.chunks(2) {
            track.push((
                parse_num::<u32>(chunk[0], path, line_no, "track image id")?,
                parse_num::<u32>(chunk[1], path, line_no, "track observation index")?,
            ));
        }
        if track.len() < 2 {
            return Err(SceneError::parse(path, line_no, format!("point {id} is tracked in fewer than 2 images")));
        }
        if points
            .insert(id, Point3D { id, position, color, reproj_error, track })
            .is_some()
        {
            return Err(SceneError::parse(path, line_no, format!("duplicate point id {id}")));
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fixture_model() -> SparseModel {
        let mut model = SparseModel::default();
        model.cameras.insert(
            1,
            CameraIntrinsics {
                id: 1,
                kind: CameraKind::Pinhole,
                width: 640,
                height: 480,
                fx: 500.0,
                fy: 510.0,
                cx: 319.5,
                cy: 239.5,
            },
        );
        let mut obs_a = Vec::new();
        let mut obs_b = Vec::new();
        for pid in 0..3u64 {
            obs_a.push(Observation {
                x: 10.0 + pid as f64,
                y: 20.0,
                point3d: Some(pid),
            });
            obs_b.push(Observation {
                x: 11.0 + pid as f64,
                y: 21.5,
                point3d: Some(pid),
            });
        }
        obs_a.push(Observation {
            x: 1.25,
            y: 2.5,
            point3d: None,
        });
        model.images.insert(
            1,
            ImageMeta {
                id: 1,
                camera_id: 1,
                name: "a.png".into(),
                qvec: [1.0, 0.0, 0.0, 0.0],
                tvec: Vector3::new(0.0, 0.0, 0.0),
                observations: obs_a,
            },
        );
        model.images.insert(
            2,
            ImageMeta {
                id: 2,
                camera_id: 1,
                name: "b.png".into(),
                qvec: [0.9238795325112867, 0.0, 0.3826834323650898, 0.0],
                tvec: Vector3::new(-0.3, 0.01, 0.2),
                observations: obs_b,
            },
        );
        for pid in 0..3u64 {
            model.points.insert(
                pid,
                Point3D {
                    id: pid,
                    position: Vector3::new(pid as f64, -1.0, 4.0 + pid as f64 / 3.0),
                    color: [10, 20, 30],
                    reproj_error: 0.5,
                    track: vec![(1, pid as u32), (2, pid as u32)],
                },
            );
        }
        model
    }

    #[test]
    fn write_parse_is_identity_on_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let model = fixture_model();
        model.write(dir.path()).unwrap();
        let parsed = parse_sparse_model(dir.path()).unwrap();
        assert_eq!(parsed, model);
        assert_eq!(parsed.cameras.len(), 1);
        assert_eq!(parsed.images.len(), 2);
        assert_eq!(parsed.points.len(), 3);
    }

    #[test]
    fn serialize_parse_serialize_is_fixed_point() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let model = fixture_model();
        model.write(dir_a.path()).unwrap();
        let parsed = parse_sparse_model(dir_a.path()).unwrap();
        parsed.write(dir_b.path()).unwrap();
        for name in ["cameras.txt", "images.txt", "points3D.txt"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} changed across a parse/serialize cycle");
        }
    }

    #[test]
    fn empty_points_file_parses() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = fixture_model();
        model.points.clear();
        for img in model.images.values_mut() {
            for obs in &mut img.observations {
                obs.point3d = None;
            }
        }
        model.write(dir.path()).unwrap();
        let parsed = parse_sparse_model(dir.path()).unwrap();
        assert!(parsed.points.is_empty());
    }

    #[test]
    fn unknown_camera_is_a_link_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = fixture_model();
        model.images.get_mut(&2).unwrap().camera_id = 99;
        model.write(dir.path()).unwrap();
        let err = parse_sparse_model(dir.path()).unwrap_err();
        match err {
            SceneError::Link(msg) => assert!(msg.contains("unknown camera 99")),
            other => panic!("expected link error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        fixture_model().write(dir.path()).unwrap();
        let cams = dir.path().join("cameras.txt");
        let mut text = std::fs::read_to_string(&cams).unwrap();
        text.push_str("2 PINHOLE 640 480 bad 510 319.5 239.5\n");
        std::fs::write(&cams, text).unwrap();
        let err = parse_sparse_model(dir.path()).unwrap_err();
        match err {
            SceneError::Parse { line, ref message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("bad"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let err = parse_sparse_model(dir.path()).unwrap_err();
        assert!(matches!(err, SceneError::FileMissing(_)));
    }

    #[test]
    fn unsupported_model_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fixture_model().write(dir.path()).unwrap();
        let cams = dir.path().join("cameras.txt");
        let mut text = std::fs::read_to_string(&cams).unwrap();
        text.push_str("2 OPENCV 640 480 500 510 319.5 239.5 0.1 0.1 0 0\n");
        std::fs::write(&cams, text).unwrap();
        let err = parse_sparse_model(dir.path()).unwrap_err();
        match err {
            SceneError::Parse { ref message, .. } => assert!(message.contains("OPENCV")),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rotation_matrix_is_orthonormal() {
        let model = fixture_model();
        let r = model.images[&2].rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        assert!(err < 1e-12);
        let cam = model.camera(2).unwrap();
        assert!(cam.validate());
    }

    #[test]
    fn half_scale_rescales_intrinsics_and_observations() {
        let model = fixture_model();
        let half = model.half_scale();
        let cam = &half.cameras[&1];
        assert_eq!((cam.width, cam.height), (320, 240));
        assert_relative_eq!(cam.fx, 250.0, epsilon = 1e-12);
        assert_relative_eq!(cam.cx, (319.5 + 0.5) * 0.5 - 0.5, epsilon = 1e-12);
        let obs = &half.images[&1].observations[0];
        assert_relative_eq!(obs.x, (10.0 + 0.5) * 0.5 - 0.5, epsilon = 1e-12);
        // A pixel-center ray keeps its direction: (x - cx) / fx is preserved.
        let full_ray = (10.0 - 319.5) / 500.0;
        let half_ray = (obs.x - cam.cx) / cam.fx;
        assert_relative_eq!(full_ray, half_ray, epsilon = 1e-12);
    }
}
