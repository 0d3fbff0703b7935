use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{self, gemm, Matrix};
use crate::model::{GeometricFeature, RoomDatabase};

/// Shape and regularization hyperparameters of the geometry encoder.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometryConfig {
    pub mlp_hidden: usize,
    /// Relative-feature dimension `E`.
    pub embed_dim: usize,
    /// Concatenated first-layer width `E_h` (split evenly over heads).
    pub gat_hidden: usize,
    /// Room embedding dimension `E_o`.
    pub out_dim: usize,
    pub heads: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            mlp_hidden: 64,
            embed_dim: 256,
            gat_hidden: 512,
            out_dim: 1024,
            heads: 8,
            dropout: 0.5,
            leaky_slope: 0.2,
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.mlp_hidden == 0 || self.embed_dim == 0 || self.gat_hidden == 0 || self.out_dim == 0 {
            return bad("network dimensions must be positive");
        }
        if self.heads == 0 || self.gat_hidden % self.heads != 0 {
            return bad("first-layer width must split evenly over a positive head count");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.leaky_slope >= 0.0) {
            return bad("leaky slope must be non-negative");
        }
        Ok(())
    }

    /// Per-head width of the first attention layer.
    pub fn head_width(&self) -> usize {
        self.gat_hidden / self.heads
    }
}

/// One multi-head attention layer. Head `h` owns rows
/// `h * out .. (h + 1) * out` of `weight`, and row `h` of `attention`
/// holds its `[a_src | a_dst]` vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GatLayer {
    pub weight: Matrix,
    pub attention: Matrix,
}

impl GatLayer {
    fn zeros(heads: usize, input: usize, out: usize) -> Self {
        Self {
            weight: Matrix::zeros(heads * out, input),
            attention: Matrix::zeros(heads, 2 * out),
        }
    }

    fn glorot(heads: usize, input: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut layer = Self::zeros(heads, input, out);
        fill_uniform(&mut layer.weight, math::sqrt(6.0 / (input + out) as f64), rng);
        fill_uniform(&mut layer.attention, math::sqrt(6.0 / (2 * out + 1) as f64), rng);
        layer
    }
}

fn fill_uniform(m: &mut Matrix, limit: f64, rng: &mut ChaCha8Rng) {
    for x in m.as_mut_slice() {
        *x = rng.random_range(-limit..limit);
    }
}

/// Parameters of the geometry encoder: the per-object MLP and the two
/// attention layers.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometryNet {
    config: GeometryConfig,
    pub mlp_w1: Matrix,
    pub mlp_b1: Matrix,
    pub mlp_w2: Matrix,
    pub mlp_b2: Matrix,
    pub gat1: GatLayer,
    pub gat2: GatLayer,
}

impl GeometryNet {
    pub fn zeros(config: GeometryConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        Ok(Self {
            config,
            mlp_w1: Matrix::zeros(c.mlp_hidden, GeometricFeature::DIM),
            mlp_b1: Matrix::zeros(1, c.mlp_hidden),
            mlp_w2: Matrix::zeros(c.embed_dim, c.mlp_hidden),
            mlp_b2: Matrix::zeros(1, c.embed_dim),
            gat1: GatLayer::zeros(c.heads, c.embed_dim, c.head_width()),
            gat2: GatLayer::zeros(c.heads, c.gat_hidden, c.out_dim),
        })
    }

    /// He-uniform MLP weights, Glorot-uniform attention layers, zero biases.
    pub fn init(config: GeometryConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let c = config;
        fill_uniform(&mut net.mlp_w1, math::sqrt(6.0 / GeometricFeature::DIM as f64), &mut rng);
        fill_uniform(&mut net.mlp_w2, math::sqrt(6.0 / c.mlp_hidden as f64), &mut rng);
        net.gat1 = GatLayer::glorot(c.heads, c.embed_dim, c.head_width(), &mut rng);
        net.gat2 = GatLayer::glorot(c.heads, c.gat_hidden, c.out_dim, &mut rng);
        Ok(net)
    }

    pub fn config(&self) -> &GeometryConfig {
        &self.config
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn tensor_specs(config: &GeometryConfig) -> Vec<(String, (usize, usize))> {
        let c = config;
        vec![
            ("mlp.w1".to_string(), (c.mlp_hidden, GeometricFeature::DIM)),
            ("mlp.b1".to_string(), (1, c.mlp_hidden)),
            ("mlp.w2".to_string(), (c.embed_dim, c.mlp_hidden)),
            ("mlp.b2".to_string(), (1, c.embed_dim)),
            ("gat1.weight".to_string(), (c.heads * c.head_width(), c.embed_dim)),
            ("gat1.attention".to_string(), (c.heads, 2 * c.head_width())),
            ("gat2.weight".to_string(), (c.heads * c.out_dim, c.gat_hidden)),
            ("gat2.attention".to_string(), (c.heads, 2 * c.out_dim)),
        ]
    }

    pub fn tensors(&self) -> [&Matrix; 8] {
        [
            &self.mlp_w1,
            &self.mlp_b1,
            &self.mlp_w2,
            &self.mlp_b2,
            &self.gat1.weight,
            &self.gat1.attention,
            &self.gat2.weight,
            &self.gat2.attention,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 8] {
        [
            &mut self.mlp_w1,
            &mut self.mlp_b1,
            &mut self.mlp_w2,
            &mut self.mlp_b2,
            &mut self.gat1.weight,
            &mut self.gat1.attention,
            &mut self.gat2.weight,
            &mut self.gat2.attention,
        ]
    }

    /// Rebuilds a network from named tensors, checking every shape.
    pub fn from_tensors(config: GeometryConfig, tensors: Vec<(String, Matrix)>) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let specs = Self::tensor_specs(&config);
        if tensors.len() != specs.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        let mut by_name: BTreeMap<String, Matrix> = tensors.into_iter().collect();
        for ((name, shape), slot) in specs.into_iter().zip(net.tensors_mut()) {
            let t = by_name
                .remove(&name)
                .ok_or_else(|| Error::InvalidConfig(format!("missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(Error::InvalidConfig(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    shape
                )));
            }
            *slot = t;
        }
        Ok(net)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.as_slice().len()).sum()
    }

    /// Per-object transform `g(o)`.
    pub fn mlp(&self, o: &GeometricFeature) -> Vec<f64> {
        let obj = Matrix::from_rows(&[o.as_slice()]);
        let (_, _, g) = self.mlp_forward(&obj);
        g.into_vec()
    }

    fn mlp_forward(&self, objects: &Matrix) -> (Matrix, Matrix, Matrix) {
        let mut pre = Matrix::product(objects, false, &self.mlp_w1, true);
        add_row_bias(&mut pre, self.mlp_b1.as_slice());
        let mut act = pre.clone();
        act.map_inplace(relu);
        let mut g = Matrix::product(&act, false, &self.mlp_w2, true);
        add_row_bias(&mut g, self.mlp_b2.as_slice());
        (pre, act, g)
    }
}

fn add_row_bias(m: &mut Matrix, bias: &[f64]) {
    for i in 0..m.rows() {
        for (x, b) in m.row_mut(i).iter_mut().zip(bias) {
            *x += b;
        }
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Canonical `j < k` object pairs, `j` major.
fn pairs(z: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(z * (z - 1) / 2);
    for j in 0..z {
        for k in j + 1..z {
            out.push((j, k));
        }
    }
    out
}

fn pairwise_differences(g: &Matrix, pairs: &[(usize, usize)]) -> Matrix {
    let mut nodes = Matrix::zeros(pairs.len(), g.cols());
    for (p, &(j, k)) in pairs.iter().enumerate() {
        let row = nodes.row_mut(p);
        for ((x, a), b) in row.iter_mut().zip(g.row(j)).zip(g.row(k)) {
            *x = a - b;
        }
    }
    nodes
}

/// Relative features `g(o_j) - g(o_k)` for every pair `j < k` of the given
/// (already canonically ordered) objects.
pub fn relative_features(geoms: &[GeometricFeature], net: &GeometryNet) -> Result<Matrix> {
    if geoms.len() < 2 {
        return Err(Error::GeometryUnavailable(geoms.len()));
    }
    let objects = Matrix::from_rows(&geoms.iter().map(|g| g.as_slice()).collect::<Vec<_>>());
    let (_, _, g) = net.mlp_forward(&objects);
    Ok(pairwise_differences(&g, &pairs(geoms.len())))
}

/// Per-head intermediate values of one attention layer.
#[derive(Clone, Debug)]
pub struct HeadTrace {
    /// Raw scores before the leaky rectifier, `M x M`.
    pub scores: Matrix,
    /// Softmax attention, rows sum to one.
    pub attention: Matrix,
    /// Attention after dropout (equal to `attention` at inference).
    attention_used: Matrix,
    /// Attention-weighted projected features before the rectifier.
    aggregated: Matrix,
}

#[derive(Clone, Debug)]
struct LayerTrace {
    input: Matrix,
    input_mask: Option<Matrix>,
    projected: Matrix,
    heads: Vec<HeadTrace>,
    attention_masks: Vec<Matrix>,
}

#[derive(Clone, Copy)]
enum Combine {
    Concat,
    Mean,
}

struct LayerShape {
    heads: usize,
    width: usize,
    slope: f64,
    combine: Combine,
}

fn dropout_mask<R: RngCore>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Matrix {
    let keep = 1.0 / (1.0 - rate);
    let mut m = Matrix::zeros(rows, cols);
    for x in m.as_mut_slice() {
        *x = if rng.random::<f64>() < rate { 0.0 } else { keep };
    }
    m
}

fn hadamard(a: &mut Matrix, b: &Matrix) {
    for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x *= y;
    }
}

fn layer_forward<R: RngCore>(
    x: &Matrix,
    layer: &GatLayer,
    shape: &LayerShape,
    dropout: f64,
    mut rng: Option<&mut R>,
) -> (Matrix, LayerTrace) {
    let m = x.rows();
    let f = shape.width;
    let mut input = x.clone();
    let input_mask = match rng.as_deref_mut() {
        Some(r) if dropout > 0.0 => {
            let mask = dropout_mask(m, x.cols(), dropout, r);
            hadamard(&mut input, &mask);
            Some(mask)
        }
        _ => None,
    };
    // the weight is far larger than the node matrix, so stream it once
    let projected = math::row_dots(&layer.weight, &input).transpose();
    let mut out = match shape.combine {
        Combine::Concat => Matrix::zeros(m, shape.heads * f),
        Combine::Mean => Matrix::zeros(m, f),
    };
    let mut heads = Vec::with_capacity(shape.heads);
    let mut attention_masks = Vec::new();
    for h in 0..shape.heads {
        let z = projected.columns(h * f, f);
        let (a_src, a_dst) = layer.attention.row(h).split_at(f);
        let src: Vec<f64> = z.iter_rows().map(|r| math::dot(r, a_src)).collect();
        let dst: Vec<f64> = z.iter_rows().map(|r| math::dot(r, a_dst)).collect();
        let mut scores = Matrix::zeros(m, m);
        let mut attention = Matrix::zeros(m, m);
        for u in 0..m {
            let s = scores.row_mut(u);
            for v in 0..m {
                s[v] = src[u] + dst[v];
            }
            let a = attention.row_mut(u);
            let mut max = f64::NEG_INFINITY;
            for v in 0..m {
                let e = scores.get(u, v);
                a[v] = if e > 0.0 { e } else { shape.slope * e };
                max = max.max(a[v]);
            }
            let mut sum = 0.0;
            for v in a.iter_mut() {
                *v = math::exp(*v - max);
                sum += *v;
            }
            a.iter_mut().for_each(|v| *v /= sum);
        }
        let mut attention_used = attention.clone();
        if let Some(r) = rng.as_deref_mut() {
            if dropout > 0.0 {
                let mask = dropout_mask(m, m, dropout, r);
                hadamard(&mut attention_used, &mask);
                attention_masks.push(mask);
            }
        }
        let aggregated = Matrix::product(&attention_used, false, &z, false);
        let mut act = aggregated.clone();
        act.map_inplace(relu);
        match shape.combine {
            Combine::Concat => out.set_columns(h * f, &act),
            Combine::Mean => math::axpy(1.0 / shape.heads as f64, act.as_slice(), out.as_mut_slice()),
        }
        heads.push(HeadTrace {
            scores,
            attention,
            attention_used,
            aggregated,
        });
    }
    (
        out,
        LayerTrace {
            input,
            input_mask,
            projected,
            heads,
            attention_masks,
        },
    )
}

fn layer_backward(
    d_out: &Matrix,
    layer: &GatLayer,
    trace: &LayerTrace,
    shape: &LayerShape,
    grad: &mut GatLayer,
) -> Matrix {
    let m = d_out.rows();
    let f = shape.width;
    let mut d_proj = Matrix::zeros(m, shape.heads * f);
    for h in 0..shape.heads {
        let ht = &trace.heads[h];
        let z = trace.projected.columns(h * f, f);
        let mut d_agg = match shape.combine {
            Combine::Concat => d_out.columns(h * f, f),
            Combine::Mean => {
                let mut d = d_out.clone();
                d.map_inplace(|x| x / shape.heads as f64);
                d
            }
        };
        for (d, &a) in d_agg.as_mut_slice().iter_mut().zip(ht.aggregated.as_slice()) {
            if a <= 0.0 {
                *d = 0.0;
            }
        }
        let mut d_att = Matrix::product(&d_agg, false, &z, true);
        let mut dz = Matrix::product(&ht.attention_used, true, &d_agg, false);
        if let Some(mask) = trace.attention_masks.get(h) {
            hadamard(&mut d_att, mask);
        }

        let (a_src, a_dst) = layer.attention.row(h).split_at(f);
        let mut d_src = vec![0.0; m];
        let mut d_dst = vec![0.0; m];
        for u in 0..m {
            let att = ht.attention.row(u);
            let da = d_att.row(u);
            let inner = math::dot(att, da);
            for v in 0..m {
                let de = att[v] * (da[v] - inner);
                let dpre = if ht.scores.get(u, v) > 0.0 { de } else { shape.slope * de };
                d_src[u] += dpre;
                d_dst[v] += dpre;
            }
        }
        {
            let g_att = grad.attention.row_mut(h);
            let (g_src, g_dst) = g_att.split_at_mut(f);
            for u in 0..m {
                math::axpy(d_src[u], z.row(u), g_src);
                math::axpy(d_dst[u], z.row(u), g_dst);
            }
        }
        for u in 0..m {
            let row = dz.row_mut(u);
            math::axpy(d_src[u], a_src, row);
            math::axpy(d_dst[u], a_dst, row);
        }
        d_proj.set_columns(h * f, &dz);
    }
    gemm(1.0, &d_proj, true, &trace.input, false, 1.0, &mut grad.weight);
    let mut d_input = Matrix::product(&d_proj, false, &layer.weight, false);
    if let Some(mask) = &trace.input_mask {
        hadamard(&mut d_input, mask);
    }
    d_input
}

fn shapes(c: &GeometryConfig) -> (LayerShape, LayerShape) {
    (
        LayerShape {
            heads: c.heads,
            width: c.head_width(),
            slope: c.leaky_slope,
            combine: Combine::Concat,
        },
        LayerShape {
            heads: c.heads,
            width: c.out_dim,
            slope: c.leaky_slope,
            combine: Combine::Mean,
        },
    )
}

fn gat_layers<R: RngCore>(
    nodes: &Matrix,
    net: &GeometryNet,
    mut rng: Option<&mut R>,
) -> (Matrix, LayerTrace, Matrix, LayerTrace) {
    let c = &net.config;
    let (s1, s2) = shapes(c);
    let (hidden, t1) = layer_forward(nodes, &net.gat1, &s1, c.dropout, rng.as_deref_mut());
    let (out, t2) = layer_forward(&hidden, &net.gat2, &s2, c.dropout, rng);
    (hidden, t1, out, t2)
}

/// Two attention layers over the complete graph (with self-loops) of the
/// given nodes, in inference mode. Returns one `E_o` row per node.
pub fn gat_forward(nodes: &Matrix, net: &GeometryNet) -> Matrix {
    assert!(nodes.rows() > 0, "attention needs at least one node");
    gat_layers::<ChaCha8Rng>(nodes, net, None).2
}

/// Training-mode forward: dropout on node inputs and attention weights with
/// masks drawn from `rng`.
pub fn gat_forward_train<R: RngCore>(nodes: &Matrix, net: &GeometryNet, rng: &mut R) -> Matrix {
    assert!(nodes.rows() > 0, "attention needs at least one node");
    gat_layers(nodes, net, Some(rng)).2
}

/// Every intermediate of a full forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    objects: Matrix,
    mlp_pre: Matrix,
    mlp_act: Matrix,
    pairs: Vec<(usize, usize)>,
    layer1: LayerTrace,
    layer2: LayerTrace,
    /// Node outputs of the second layer, `M x E_o`.
    pub outputs: Matrix,
    /// Mean of the node outputs.
    pub embedding: Vec<f64>,
}

impl ForwardTrace {
    pub fn first_layer_heads(&self) -> &[HeadTrace] {
        &self.layer1.heads
    }

    pub fn second_layer_heads(&self) -> &[HeadTrace] {
        &self.layer2.heads
    }
}

impl GeometryNet {
    /// Full forward pass from canonically ordered object features to the
    /// room embedding. `rng` enables dropout.
    pub fn forward<R: RngCore>(&self, geoms: &[GeometricFeature], rng: Option<&mut R>) -> Result<ForwardTrace> {
        if geoms.len() < 2 {
            return Err(Error::GeometryUnavailable(geoms.len()));
        }
        let objects = Matrix::from_rows(&geoms.iter().map(|g| g.as_slice()).collect::<Vec<_>>());
        let (mlp_pre, mlp_act, g) = self.mlp_forward(&objects);
        let pairs = pairs(geoms.len());
        let nodes = pairwise_differences(&g, &pairs);
        let (_, layer1, outputs, layer2) = gat_layers(&nodes, self, rng);
        let mut embedding = vec![0.0; outputs.cols()];
        for row in outputs.iter_rows() {
            math::axpy(1.0, row, &mut embedding);
        }
        math::scale(&mut embedding, 1.0 / outputs.rows() as f64);
        Ok(ForwardTrace {
            objects,
            mlp_pre,
            mlp_act,
            pairs,
            layer1,
            layer2,
            outputs,
            embedding,
        })
    }

    /// Accumulates into `grad` the parameter gradient of a scalar loss whose
    /// gradient with respect to `trace.embedding` is `d_embedding`.
    pub fn backward(&self, trace: &ForwardTrace, d_embedding: &[f64], grad: &mut GeometryNet) {
        let (s1, s2) = shapes(&self.config);
        let m = trace.outputs.rows();
        let mut d_out = Matrix::zeros(m, trace.outputs.cols());
        for u in 0..m {
            math::axpy(1.0 / m as f64, d_embedding, d_out.row_mut(u));
        }
        let d_hidden = layer_backward(&d_out, &self.gat2, &trace.layer2, &s2, &mut grad.gat2);
        let d_nodes = layer_backward(&d_hidden, &self.gat1, &trace.layer1, &s1, &mut grad.gat1);

        let mut d_g = Matrix::zeros(trace.objects.rows(), self.config.embed_dim);
        for (p, &(j, k)) in trace.pairs.iter().enumerate() {
            math::axpy(1.0, d_nodes.row(p), d_g.row_mut(j));
            math::axpy(-1.0, d_nodes.row(p), d_g.row_mut(k));
        }
        gemm(1.0, &d_g, true, &trace.mlp_act, false, 1.0, &mut grad.mlp_w2);
        for row in d_g.iter_rows() {
            math::axpy(1.0, row, grad.mlp_b2.as_mut_slice());
        }
        let mut d_pre = Matrix::product(&d_g, false, &self.mlp_w2, false);
        for (d, &p) in d_pre.as_mut_slice().iter_mut().zip(trace.mlp_pre.as_slice()) {
            if p <= 0.0 {
                *d = 0.0;
            }
        }
        gemm(1.0, &d_pre, true, &trace.objects, false, 1.0, &mut grad.mlp_w1);
        for row in d_pre.iter_rows() {
            math::axpy(1.0, row, grad.mlp_b1.as_mut_slice());
        }
    }
}

/// Room embedding of objects already in canonical (object-id) order.
pub fn room_geom_embedding_ordered(geoms: &[GeometricFeature], net: &GeometryNet) -> Result<Vec<f64>> {
    Ok(net.forward::<ChaCha8Rng>(geoms, None)?.embedding)
}

/// Room embedding of labelled objects; objects are put in id order first, so
/// the result does not depend on input order.
pub fn room_geom_embedding<S: AsRef<str>>(objects: &[(S, GeometricFeature)], net: &GeometryNet) -> Result<Vec<f64>> {
    let mut sorted: Vec<&(S, GeometricFeature)> = objects.iter().collect();
    sorted.sort_by(|a, b| a.0.as_ref().cmp(b.0.as_ref()));
    let geoms: Vec<GeometricFeature> = sorted.iter().map(|(_, g)| *g).collect();
    room_geom_embedding_ordered(&geoms, net)
}

/// Geometry score of every room for a query given as labelled objects.
pub fn geometry_scores<S: AsRef<str>>(
    db: &RoomDatabase,
    query: &[(S, GeometricFeature)],
    net: &GeometryNet,
) -> Result<BTreeMap<String, f64>> {
    let r = room_geom_embedding(query, net)?;
    Ok(geometry_scores_for_embedding(db, &r))
}

/// Cosine between the query room embedding and every stored room
/// embedding; rooms without one score 0.
pub fn geometry_scores_for_embedding(db: &RoomDatabase, query_embedding: &[f64]) -> BTreeMap<String, f64> {
    db.rooms()
        .iter()
        .map(|room| {
            let s = room
                .geom_embedding()
                .filter(|r| r.len() == query_embedding.len())
                .map_or(0.0, |r| math::cosine(r, query_embedding));
            (room.room_id().to_string(), s)
        })
        .collect()
}
