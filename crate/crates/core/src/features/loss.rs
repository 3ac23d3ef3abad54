use rayon::prelude::*;

use super::{backward, forward_prefix, FeatureMap, FeatureNetwork, LayerSeeds};
use crate::error::{Error, Result};
use crate::render::GrayImage;

/// `G[m][n] = sum_i F[m][i] * F[n][i]`, row-major `C x C`.
pub fn gram(f: &FeatureMap) -> Vec<f64> {
    let c = f.channels();
    let mut g = vec![0.0; c * c];
    g.par_chunks_mut(c).enumerate().for_each(|(m, row)| {
        let fm = f.channel(m);
        for (n, out) in row.iter_mut().enumerate() {
            *out = fm.iter().zip(f.channel(n)).map(|(a, b)| a * b).sum();
        }
    });
    g
}

/// Target feature maps `M^l` keyed by layer name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContentParams {
    pub targets: Vec<(String, FeatureMap)>,
}

impl ContentParams {
    pub fn none() -> Self {
        Self::default()
    }

    /// Uses the activations of `img` at `layers` as targets.
    pub fn from_image(net: &FeatureNetwork, img: &GrayImage, layers: &[String]) -> Result<Self> {
        let idx = resolve(net, layers)?;
        let acts = forward_prefix(net, img, depth_of(&idx))?;
        Ok(ContentParams {
            targets: layers.iter().zip(&idx).map(|(n, &i)| (n.clone(), acts.get(i).clone())).collect(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Style layers and the Gram matrices of the style image at those layers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StyleParams {
    pub layers: Vec<String>,
    pub grams: Vec<Vec<f64>>,
    /// Spatial positions of each layer's style activations.
    pub positions: Vec<usize>,
}

impl StyleParams {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn from_image(net: &FeatureNetwork, style: &GrayImage, layers: &[String]) -> Result<Self> {
        let idx = resolve(net, layers)?;
        let acts = forward_prefix(net, style, depth_of(&idx))?;
        Ok(StyleParams {
            layers: layers.to_vec(),
            grams: idx.iter().map(|&i| gram(acts.get(i))).collect(),
            positions: idx.iter().map(|&i| acts.get(i).positions()).collect(),
        })
    }

    /// Gram targets for an `h x w` input. Raw Gram entries grow with the
    /// number of positions, so each target is scaled by the ratio of layer
    /// positions at `h x w` to those of the style image.
    pub fn for_size(&self, net: &FeatureNetwork, h: usize, w: usize) -> Result<Self> {
        if self.layers.is_empty() {
            return Ok(self.clone());
        }
        let idx = resolve(net, &self.layers)?;
        let shapes = net.prefix_shapes(h, w, depth_of(&idx))?;
        let grams = idx
            .iter()
            .zip(&self.grams)
            .zip(&self.positions)
            .map(|((&i, g), &ns)| {
                let (_, lh, lw) = shapes[i];
                if lh * lw == ns {
                    return g.clone();
                }
                let k = (lh * lw) as f64 / ns as f64;
                g.iter().map(|v| v * k).collect()
            })
            .collect();
        Ok(StyleParams {
            layers: self.layers.clone(),
            grams,
            positions: idx.iter().map(|&i| shapes[i].1 * shapes[i].2).collect(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) || alpha + beta == 0.0 {
            return Err(Error::invalid(format!(
                "loss weights must be >= 0 and not both zero (alpha {alpha}, beta {beta})"
            )));
        }
        Ok(LossWeights { alpha, beta })
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 1.0, beta: 1.0 }
    }
}

fn resolve(net: &FeatureNetwork, names: &[String]) -> Result<Vec<usize>> {
    names.iter().map(|n| net.layer_index(n)).collect()
}

fn depth_of(idx: &[usize]) -> usize {
    idx.iter().map(|i| i + 1).max().unwrap_or(0)
}

fn add_seed(seeds: &mut LayerSeeds, idx: usize, g: FeatureMap) {
    match &mut seeds[idx] {
        Some(s) => s.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g),
    }
}

/// `sum_l sum (F^l - M^l)^2 / (H_l W_l C_l)` and its seeds, one slot per
/// layer in `outputs`.
pub fn content_loss(net: &FeatureNetwork, outputs: &[FeatureMap], pc: &ContentParams) -> Result<(f64, LayerSeeds)> {
    let mut seeds = vec![None; outputs.len()];
    let mut loss = 0.0;
    for (name, target) in &pc.targets {
        let idx = net.layer_index(name)?;
        let f = outputs
            .get(idx)
            .ok_or_else(|| Error::invalid(format!("layer `{name}` was not evaluated")))?;
        target.ensure_shape(f.shape(), "content target")?;
        let n = f.data().len() as f64;
        let mut g = FeatureMap::zeros(f.c, f.h, f.w);
        let mut sum = 0.0;
        for ((o, &a), &m) in g.data_mut().iter_mut().zip(f.data()).zip(target.data()) {
            let r = a - m;
            sum += r * r;
            *o = 2.0 * r / n;
        }
        loss += sum / n;
        add_seed(&mut seeds, idx, g);
    }
    Ok((loss, seeds))
}

/// `sum_l sum (G^l - G_s^l)^2 / (4 C_l^2 N_l^2)` and its seeds.
pub fn style_loss(net: &FeatureNetwork, outputs: &[FeatureMap], ps: &StyleParams) -> Result<(f64, LayerSeeds)> {
    if ps.layers.len() != ps.grams.len() {
        return Err(Error::LengthMismatch {
            what: "style layers vs gram matrices",
            left: ps.layers.len(),
            right: ps.grams.len(),
        });
    }
    let mut seeds = vec![None; outputs.len()];
    let mut loss = 0.0;
    for (name, gs) in ps.layers.iter().zip(&ps.grams) {
        let idx = net.layer_index(name)?;
        let f = outputs
            .get(idx)
            .ok_or_else(|| Error::invalid(format!("layer `{name}` was not evaluated")))?;
        let c = f.channels();
        if gs.len() != c * c {
            return Err(Error::invalid(format!(
                "style gram for `{name}` has {} entries, layer has {c} channels",
                gs.len()
            )));
        }
        let n = f.positions() as f64;
        let cf = c as f64;
        let diff: Vec<f64> = gram(f).iter().zip(gs).map(|(a, b)| a - b).collect();
        loss += diff.iter().map(|d| d * d).sum::<f64>() / (4.0 * cf * cf * n * n);
        // d/dF = (G - G_s) F / (C^2 N^2), using the symmetry of G - G_s.
        let k = 1.0 / (cf * cf * n * n);
        let np = f.positions();
        let mut g = FeatureMap::zeros(c, f.h, f.w);
        g.data_mut().par_chunks_mut(np).enumerate().for_each(|(m, row)| {
            for nn in 0..c {
                let d = diff[m * c + nn] * k;
                if d != 0.0 {
                    for (o, v) in row.iter_mut().zip(f.channel(nn)) {
                        *o += d * v;
                    }
                }
            }
        });
        add_seed(&mut seeds, idx, g);
    }
    Ok((loss, seeds))
}

/// `sigma(I) * (alpha L_c + beta L_s)` with `sigma(I) = sum_ij I_ij`, and its
/// gradient with respect to the image.
pub fn combined_loss(
    net: &FeatureNetwork,
    img: &GrayImage,
    pc: &ContentParams,
    ps: &StyleParams,
    w: &LossWeights,
) -> Result<(f64, GrayImage)> {
    let mut names: Vec<String> = Vec::new();
    if w.alpha != 0.0 {
        names.extend(pc.targets.iter().map(|(n, _)| n.clone()));
    }
    if w.beta != 0.0 {
        names.extend(ps.layers.iter().cloned());
    }
    let sigma = img.sum();
    if names.is_empty() {
        return Ok((0.0, GrayImage::zeros(img.height(), img.width())));
    }
    let depth = depth_of(&resolve(net, &names)?);
    let acts = forward_prefix(net, img, depth)?;
    let mut seeds: LayerSeeds = vec![None; depth];
    let mut inner = 0.0;
    if w.alpha != 0.0 {
        let (l, s) = content_loss(net, acts.outputs(), pc)?;
        inner += w.alpha * l;
        merge_scaled(&mut seeds, s, w.alpha * sigma);
    }
    if w.beta != 0.0 {
        let (l, s) = style_loss(net, acts.outputs(), ps)?;
        inner += w.beta * l;
        merge_scaled(&mut seeds, s, w.beta * sigma);
    }
    let mut grad = backward(net, &acts, &seeds)?;
    grad.data_mut().iter_mut().for_each(|g| *g += inner);
    Ok((sigma * inner, grad))
}

fn merge_scaled(into: &mut LayerSeeds, from: LayerSeeds, k: f64) {
    for (idx, s) in from.into_iter().enumerate() {
        if let Some(mut s) = s {
            s.data_mut().iter_mut().for_each(|v| *v *= k);
            add_seed(into, idx, s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::{fd_rel_error, random_image, small_net};
    use super::super::forward;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn gram_cases() {
        assert!(gram(&FeatureMap::zeros(3, 4, 4)).iter().all(|&v| v == 0.0));
        let f = random_map(1, 3, 5, 1);
        assert_eq!(gram(&f), vec![f.data().iter().map(|v| v * v).sum::<f64>()]);
        let f1 = random_map(1, 3, 3, 2);
        let mut both = f1.data().to_vec();
        both.extend(f1.data().iter().map(|v| 2.0 * v));
        let g = gram(&FeatureMap::from_vec(2, 3, 3, both).unwrap());
        let n2: f64 = f1.data().iter().map(|v| v * v).sum();
        let want = [n2, 2.0 * n2, 2.0 * n2, 4.0 * n2];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-12 * n2);
        }
    }

    #[test]
    fn gram_symmetric_psd() {
        let f = random_map(4, 5, 6, 3);
        let g = gram(&f);
        for m in 0..4 {
            for n in 0..4 {
                assert_eq!(g[m * 4 + n], g[n * 4 + m]);
            }
        }
        // x^T G x = |F^T x|^2 >= 0 for random probes.
        let trace: f64 = (0..4).map(|m| g[m * 5]).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q: f64 = (0..4).flat_map(|m| (0..4).map(move |n| (m, n))).map(|(m, n)| x[m] * g[m * 4 + n] * x[n]).sum();
            assert!(q >= -1e-9 * trace);
        }
    }

    #[test]
    fn content_loss_cases() {
        let net = small_net(1);
        let img = random_image(8, 8, 2);
        let acts = forward(&net, &img).unwrap();
        let names = vec!["a".to_string(), "b.pool".to_string()];
        let pc = ContentParams::from_image(&net, &img, &names).unwrap();
        let (l, s) = content_loss(&net, acts.outputs(), &pc).unwrap();
        assert_eq!(l, 0.0);
        assert!(s.iter().flatten().all(|g| g.data().iter().all(|&v| v == 0.0)));

        let zeros = ContentParams {
            targets: names
                .iter()
                .map(|n| {
                    let (c, h, w) = acts.get(net.layer_index(n).unwrap()).shape();
                    (n.clone(), FeatureMap::zeros(c, h, w))
                })
                .collect(),
        };
        let (l, _) = content_loss(&net, acts.outputs(), &zeros).unwrap();
        let want: f64 = [1, 4]
            .iter()
            .map(|&i| {
                let d = acts.get(i).data();
                d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64
            })
            .sum();
        assert!((l - want).abs() < 1e-14 * want);

        let bad = ContentParams {
            targets: vec![("a".into(), FeatureMap::zeros(1, 2, 2))],
        };
        assert!(content_loss(&net, acts.outputs(), &bad).is_err());
    }

    #[test]
    fn content_loss_matches_summation_oracle() {
        let net = small_net(5);
        let acts = forward(&net, &random_image(8, 8, 6)).unwrap();
        let t = random_map(4, 8, 8, 7);
        let pc = ContentParams {
            targets: vec![("b".into(), t.clone())],
        };
        let (l, _) = content_loss(&net, acts.outputs(), &pc).unwrap();
        let f = acts.get(3);
        let mut sum = 0.0;
        for c in 0..4 {
            for y in 0..8 {
                for x in 0..8 {
                    sum += (f.get(c, y, x) - t.get(c, y, x)).powi(2);
                }
            }
        }
        assert_eq!(l, sum / 256.0);
    }

    #[test]
    fn style_loss_cases() {
        let net = small_net(1);
        let img = random_image(8, 8, 2);
        let acts = forward(&net, &img).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let ps = StyleParams::from_image(&net, &img, &names).unwrap();
        assert_eq!(style_loss(&net, acts.outputs(), &ps).unwrap().0, 0.0);

        let zero_outputs: Vec<FeatureMap> = acts.outputs().iter().map(|a| FeatureMap::zeros(a.c, a.h, a.w)).collect();
        let (l, _) = style_loss(&net, &zero_outputs, &ps).unwrap();
        let want: f64 = ps
            .grams
            .iter()
            .zip([3.0f64, 4.0])
            .map(|(g, c)| g.iter().map(|v| v * v).sum::<f64>() / (4.0 * c * c * 64.0 * 64.0))
            .sum();
        assert!((l - want).abs() < 1e-14 * want);
    }

    #[test]
    fn style_gradient_matches_fd() {
        let net = small_net(8);
        let names = vec!["a".to_string(), "b.pool".to_string()];
        let ps = StyleParams::from_image(&net, &random_image(10, 10, 9), &names).unwrap();
        let img = random_image(12, 12, 10);
        let f = |im: &GrayImage| style_loss(&net, forward(&net, im).unwrap().outputs(), &ps).unwrap().0;
        let acts = forward(&net, &img).unwrap();
        let (_, seeds) = style_loss(&net, acts.outputs(), &ps).unwrap();
        let g = backward(&net, &acts, &seeds).unwrap();
        let err = fd_rel_error(f, &img, &g, 1e-6);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn combined_gradient_matches_fd() {
        let net = small_net(11);
        let pc = ContentParams {
            targets: vec![("a".into(), random_map(3, 12, 12, 12))],
        };
        let ps = StyleParams::from_image(&net, &random_image(12, 12, 13), &["b".to_string()]).unwrap();
        let w = LossWeights::new(0.7, 2.0).unwrap();
        let img = random_image(12, 12, 14);
        let (l, g) = combined_loss(&net, &img, &pc, &ps, &w).unwrap();
        assert!(l > 0.0);
        let f = |im: &GrayImage| combined_loss(&net, im, &pc, &ps, &w).unwrap().0;
        let err = fd_rel_error(f, &img, &g, 1e-6);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn combined_limits() {
        let net = small_net(15);
        let ps = StyleParams::from_image(&net, &random_image(12, 12, 16), &["b".to_string()]).unwrap();
        let w = LossWeights::default();
        let (l, _) = combined_loss(&net, &GrayImage::zeros(12, 12), &ContentParams::none(), &ps, &w).unwrap();
        assert_eq!(l, 0.0);
        let img = random_image(12, 12, 17);
        let own = StyleParams::from_image(&net, &img, &["b".to_string()]).unwrap();
        let (l, g) = combined_loss(&net, &img, &ContentParams::none(), &own, &LossWeights::new(0.0, 1.0).unwrap()).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
        assert!(LossWeights::new(0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0).is_err());
    }
}
