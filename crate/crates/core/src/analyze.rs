//! Classical scaling for visualization, and CSV serialization of matrices
//! and coordinates.

use std::io::{Read, Write};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::cluster::DistanceMatrix;
use crate::error::{Error, Result};

/// Low-dimensional coordinates recovered from a distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// `N x a` coordinates, one row per item.
    pub coords: DMatrix<f64>,
    /// The retained eigenvalues after clamping at zero, nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// Sum of the magnitudes of all negative eigenvalues. Zero when the
    /// distances are Euclidean.
    pub negative_mass: f64,
}

/// Torgerson scaling: double-centre `-D^2/2` and keep the top `a` eigenpairs.
///
/// Each eigenvector is signed so that its largest-magnitude entry is
/// positive, which makes the output reproducible.
pub fn classical_mds(d: &DistanceMatrix, a: usize) -> Result<Embedding> {
    let n = d.n();
    if n == 1 && a >= 1 {
        return Ok(Embedding {
            coords: DMatrix::zeros(1, a),
            eigenvalues: vec![0.0; a],
            negative_mass: 0.0,
        });
    }
    if a == 0 || a >= n {
        return Err(Error::InvalidParam(format!("embedding dimension {a} outside 1..{n}")));
    }
    let sq = d.as_matrix().map(|v| v * v);
    let row_means: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&p, &q| eig.eigenvalues[q].total_cmp(&eig.eigenvalues[p]).then(p.cmp(&q)));
    let negative_mass = eig.eigenvalues.iter().filter(|&&l| l < 0.0).map(|l| -l).sum();

    let mut coords = DMatrix::zeros(n, a);
    let mut eigenvalues = Vec::with_capacity(a);
    for (c, &k) in order.iter().take(a).enumerate() {
        let lambda = eig.eigenvalues[k].max(0.0);
        let v = eig.eigenvectors.column(k);
        let pivot = (0..n).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            coords[(i, c)] = sign * v[i] * lambda.sqrt();
        }
        eigenvalues.push(lambda);
    }
    Ok(Embedding {
        coords,
        eigenvalues,
        negative_mass,
    })
}

/// Write an `N x N` matrix with an id header row and an id first column.
pub fn write_distance_csv<W: Write>(out: W, ids: &[String], d: &DistanceMatrix) -> Result<()> {
    if ids.len() != d.n() {
        return Err(Error::Size(ids.len(), d.n()));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![String::new()];
    header.extend(ids.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend((0..d.n()).map(|j| d.get(i, j).to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_distance_csv`].
pub fn read_distance_csv<R: Read>(input: R) -> Result<(Vec<String>, DistanceMatrix)> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Format("distance file is empty".into()))?
        .map_err(csv_err)?;
    let ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let n = ids.len();
    let mut entries = DMatrix::zeros(n, n);
    let mut rows = 0;
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(csv_err)?;
        if i >= n {
            return Err(Error::Format(format!("more than {n} rows in distance file")));
        }
        if rec.len() != n + 1 {
            return Err(Error::Format(format!("row {} has {} fields, expected {}", i + 1, rec.len(), n + 1)));
        }
        if &rec[0] != ids[i].as_str() {
            return Err(Error::Format(format!("row id {:?} does not match column id {:?}", &rec[0], ids[i])));
        }
        for j in 0..n {
            entries[(i, j)] = parse_f64(&rec[j + 1])?;
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Format(format!("expected {n} rows, found {rows}")));
    }
    Ok((ids, DistanceMatrix::new(entries)?))
}

/// Write `id, x, y, ..., cluster_label` rows; labels are left blank when absent.
pub fn write_coords_csv<W: Write>(out: W, ids: &[String], emb: &Embedding, labels: Option<&[usize]>) -> Result<()> {
    let n = emb.coords.nrows();
    if ids.len() != n {
        return Err(Error::Size(ids.len(), n));
    }
    if let Some(l) = labels {
        if l.len() != n {
            return Err(Error::Size(l.len(), n));
        }
    }
    let axis = ["x", "y", "z"];
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string()];
    header.extend((0..emb.coords.ncols()).map(|c| axis.get(c).map_or(format!("x{}", c + 1), |s| s.to_string())));
    header.push("cluster_label".into());
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..n {
        let mut row = vec![ids[i].clone()];
        // adding 0.0 turns -0 into 0
        row.extend(emb.coords.row(i).iter().map(|v| (v + 0.0).to_string()));
        row.push(labels.map_or(String::new(), |l| l[i].to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Write the rows of a point matrix as headerless CSV.
pub fn write_points_csv<W: Write>(out: W, points: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..points.nrows() {
        w.write_record(points.row(i).iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Read headerless numeric CSV into an `n x d` matrix.
pub fn read_points_csv<R: Read>(input: R) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = rec.iter().map(parse_f64).collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!("row {} has {} columns, expected {}", i + 1, row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::InsufficientData("no observations".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("not a number: {s:?}")))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_points(p: &DMatrix<f64>) -> DistanceMatrix {
        DistanceMatrix::from_sq_fn(p.nrows(), |i, j| Ok((p.row(i) - p.row(j)).norm_squared())).unwrap()
    }

    #[test]
    fn equilateral_triangle() {
        let d = DistanceMatrix::new(DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 })).unwrap();
        let emb = classical_mds(&d, 2).unwrap();
        for i in 0..3 {
            for j in 0..i {
                let dist = (emb.coords.row(i) - emb.coords.row(j)).norm();
                assert!((dist - 1.0).abs() < 1e-12);
            }
        }
        assert!(emb.negative_mass < 1e-12);
    }

    #[test]
    fn recovers_planar_configuration() {
        let mut rng = crate::rng::stream(2);
        use rand::Rng;
        let p = DMatrix::from_fn(9, 2, |_, _| rng.random_range(-4.0..4.0));
        let d = from_points(&p);
        let emb = classical_mds(&d, 2).unwrap();
        // distances are rigid-motion invariant, so comparing them is the Procrustes check
        let back = from_points(&emb.coords);
        for i in 0..9 {
            for j in 0..9 {
                assert!((back.get(i, j) - d.get(i, j)).abs() < 1e-8);
            }
        }
        assert!(emb.eigenvalues[0] >= emb.eigenvalues[1]);
    }

    #[test]
    fn single_item_and_bad_dimension() {
        let d = DistanceMatrix::new(DMatrix::zeros(1, 1)).unwrap();
        let emb = classical_mds(&d, 2).unwrap();
        assert_eq!(emb.coords, DMatrix::zeros(1, 2));
        let d = DistanceMatrix::new(DMatrix::zeros(3, 3)).unwrap();
        assert!(classical_mds(&d, 0).is_err());
        assert!(classical_mds(&d, 3).is_err());
    }

    #[test]
    fn non_euclidean_reports_negative_mass() {
        // a 4-cycle metric with both diagonals too long for the plane
        let v = [0.0, 1.0, 2.0, 1.0, 1.0, 0.0, 1.0, 2.0, 2.0, 1.0, 0.0, 1.0, 1.0, 2.0, 1.0, 0.0];
        let mut m = DMatrix::from_row_slice(4, 4, &v);
        m[(0, 2)] = 1.9;
        m[(2, 0)] = 1.9;
        m[(1, 3)] = 1.9;
        m[(3, 1)] = 1.9;
        let emb = classical_mds(&DistanceMatrix::new(m).unwrap(), 2).unwrap();
        assert!(emb.negative_mass > 0.0);
    }

    #[test]
    fn distance_csv_round_trip() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let d = DistanceMatrix::new(DMatrix::from_row_slice(3, 3, &[0.0, 0.1, 2.5, 0.1, 0.0, 1.0 / 3.0, 2.5, 1.0 / 3.0, 0.0])).unwrap();
        let mut buf = Vec::new();
        write_distance_csv(&mut buf, &ids, &d).unwrap();
        let (ids2, d2) = read_distance_csv(buf.as_slice()).unwrap();
        assert_eq!(ids2, ids);
        assert_eq!(d2, d);
        assert!(read_distance_csv("x,a\na,0,1\n".as_bytes()).is_err());
        assert!(read_distance_csv("".as_bytes()).is_err());
    }

    #[test]
    fn points_csv_round_trip() {
        let p = DMatrix::from_row_slice(2, 2, &[1.5, -2.0, 1e-300, 7.0]);
        let mut buf = Vec::new();
        write_points_csv(&mut buf, &p).unwrap();
        assert_eq!(read_points_csv(buf.as_slice()).unwrap(), p);
        assert!(read_points_csv("1,2\n3\n".as_bytes()).is_err());
        assert!(read_points_csv("1,abc\n".as_bytes()).is_err());
        assert!(read_points_csv("".as_bytes()).is_err());
    }

    #[test]
    fn coords_csv_layout() {
        let emb = Embedding {
            coords: DMatrix::from_row_slice(2, 2, &[0.5, 0.0, -0.5, 0.0]),
            eigenvalues: vec![0.5, 0.0],
            negative_mass: 0.0,
        };
        let mut buf = Vec::new();
        write_coords_csv(&mut buf, &["p".into(), "q".into()], &emb, Some(&[1, 0])).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "id,x,y,cluster_label\np,0.5,0,1\nq,-0.5,0,0\n");
    }
}
