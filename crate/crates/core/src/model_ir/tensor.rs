use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DType {
    F32,
    /// 2-bit unsigned activation code in {0,1,2,3}.
    U2,
    /// Binary weight in {-1,+1}.
    Bin1,
    I32,
}

impl DType {
    /// Bytes per element in the pre-packing (dense) encoding.
    pub fn dense_bytes(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::U2 | DType::Bin1 => 1,
        }
    }

    /// Bit planes after packing; `None` for dtypes that are never packed.
    pub fn planes(self) -> Option<usize> {
        match self {
            DType::Bin1 => Some(1),
            DType::U2 => Some(2),
            _ => None,
        }
    }
}

/// Storage order of a 3-D tensor, named by the dimension that varies fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Depth x Width x Height, height updated first.
    HeightInnermost,
    /// Height x Width x Depth, depth updated first.
    DepthInnermost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorDesc {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    pub dtype: DType,
    pub layout: Layout,
}

impl TensorDesc {
    pub fn new(height: usize, width: usize, depth: usize, dtype: DType, layout: Layout) -> Self {
        Self {
            height,
            width,
            depth,
            dtype,
            layout,
        }
    }

    pub fn elements(&self) -> usize {
        self.height * self.width * self.depth
    }

    /// Flat offset of `(h, w, d)` under this descriptor's layout.
    #[inline]
    pub fn index(&self, h: usize, w: usize, d: usize) -> usize {
        match self.layout {
            Layout::DepthInnermost => (h * self.width + w) * self.depth + d,
            Layout::HeightInnermost => (d * self.width + w) * self.height + h,
        }
    }

    pub fn with_layout(mut self, layout: Layout) -> Self {
        self.layout = layout;
        self
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.height, self.width, self.depth)
    }
}

/// Spatial shape of a feature map (batch fixed at 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, depth: usize) -> Self {
        Self { height, width, depth }
    }

    pub fn elements(&self) -> usize {
        self.height * self.width * self.depth
    }

    pub fn desc(&self, dtype: DType, layout: Layout) -> TensorDesc {
        TensorDesc::new(self.height, self.width, self.depth, dtype, layout)
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.depth)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlobData {
    F32(Vec<f32>),
    U2(Vec<u8>),
    Bin1(Vec<i8>),
    I32(Vec<i32>),
}

impl BlobData {
    pub fn len(&self) -> usize {
        match self {
            BlobData::F32(v) => v.len(),
            BlobData::U2(v) => v.len(),
            BlobData::Bin1(v) => v.len(),
            BlobData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            BlobData::F32(_) => DType::F32,
            BlobData::U2(_) => DType::U2,
            BlobData::Bin1(_) => DType::Bin1,
            BlobData::I32(_) => DType::I32,
        }
    }
}

/// A dense tensor, or a stack of `count` equally-shaped tensors (a conv's kernels).
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlob {
    pub desc: TensorDesc,
    pub count: usize,
    pub data: BlobData,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BlobError {
    #[error("blob holds {found} values, descriptor needs {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("descriptor dtype {desc:?} does not match data dtype {data:?}")]
    DTypeMismatch { desc: DType, data: DType },
    #[error("zero-sized dimension in descriptor")]
    ZeroDim,
    #[error("value {value} at element {index} is outside the {dtype:?} range")]
    OutOfRange { dtype: DType, index: usize, value: i64 },
}

impl TensorBlob {
    pub fn new(desc: TensorDesc, count: usize, data: BlobData) -> Result<Self, BlobError> {
        let blob = Self { desc, count, data };
        blob.check()?;
        Ok(blob)
    }

    pub fn single(desc: TensorDesc, data: BlobData) -> Result<Self, BlobError> {
        Self::new(desc, 1, data)
    }

    pub fn check(&self) -> Result<(), BlobError> {
        let d = &self.desc;
        if d.height == 0 || d.width == 0 || d.depth == 0 || self.count == 0 {
            return Err(BlobError::ZeroDim);
        }
        if d.dtype != self.data.dtype() {
            return Err(BlobError::DTypeMismatch {
                desc: d.dtype,
                data: self.data.dtype(),
            });
        }
        let expected = self.count.checked_mul(d.elements()).ok_or(BlobError::ZeroDim)?;
        if self.data.len() != expected {
            return Err(BlobError::LengthMismatch {
                expected,
                found: self.data.len(),
            });
        }
        match &self.data {
            BlobData::U2(v) => {
                if let Some((index, &x)) = v.iter().enumerate().find(|(_, &x)| x > 3) {
                    return Err(BlobError::OutOfRange {
                        dtype: DType::U2,
                        index,
                        value: x as i64,
                    });
                }
            }
            BlobData::Bin1(v) => {
                if let Some((index, &x)) = v.iter().enumerate().find(|(_, &x)| x != 1 && x != -1) {
                    return Err(BlobError::OutOfRange {
                        dtype: DType::Bin1,
                        index,
                        value: x as i64,
                    });
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Elements per stacked tensor.
    pub fn elements(&self) -> usize {
        self.desc.elements()
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            BlobData::F32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_u2(&self) -> Option<&[u8]> {
        match &self.data {
            BlobData::U2(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bin1(&self) -> Option<&[i8]> {
        match &self.data {
            BlobData::Bin1(v) => Some(v),
            _ => None,
        }
    }

    /// Size of the dense little-endian encoding.
    pub fn dense_bytes(&self) -> usize {
        self.data.len() * self.desc.dtype.dense_bytes()
    }
}
