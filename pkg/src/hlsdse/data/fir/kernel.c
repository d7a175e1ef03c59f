void fir(float y[256], const float x[288], const float h[32])
{
#pragma ACCEL ARRAY_PARTITION variable=h auto{PART_H}
#pragma ACCEL ARRAY_TYPE variable=h auto{TYPE_H}
#pragma ACCEL ARRAY_PARTITION variable=x auto{PART_X}
#pragma ACCEL PARALLEL FACTOR=auto{PF_N}
  for (int n = 0; n < 256; n++) {
    float acc = 0.0f;
#pragma ACCEL PIPELINE auto{PIPE_T}
#pragma ACCEL PARALLEL FACTOR=auto{PF_T}
    for (int t = 0; t < 32; t++) {
      acc += h[t] * x[n + t];
    }
    y[n] = acc;
  }
}
