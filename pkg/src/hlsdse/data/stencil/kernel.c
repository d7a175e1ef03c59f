void stencil(float out[32][32], const float in[34][34], const float w[9])
{
#pragma ACCEL PIPELINE auto{PIPE_R}
#pragma ACCEL PARALLEL FACTOR=auto{PF_R}
  for (int r = 0; r < 32; r++) {
#pragma ACCEL PIPELINE auto{PIPE_C}
#pragma ACCEL PARALLEL FACTOR=auto{PF_C}
    for (int c = 0; c < 32; c++) {
      float acc = 0.0f;
#pragma ACCEL PARALLEL FACTOR=auto{PF_W}
      for (int t = 0; t < 9; t++) {
        acc += w[t] * in[r + t / 3][c + t % 3];
      }
      out[r][c] = acc;
    }
  }
}
