void trmm(float B[32][32], const float A[16][32], float alpha)
{
#pragma ACCEL PIPELINE auto{PIPE_I}
#pragma ACCEL TILE FACTOR=auto{TILE_I}
  for (int i = 0; i < 32; i++) {
#pragma ACCEL PIPELINE auto{PIPE_J}
#pragma ACCEL PARALLEL FACTOR=auto{PF_J}
    for (int j = 0; j < 32; j++) {
      float sum = B[i][j];
#pragma ACCEL PARALLEL FACTOR=auto{PF_K}
      for (int k = 0; k < 16; k++) {
        if (k > i)
          sum += A[k][i] * B[k][j];
      }
      B[i][j] = alpha * sum;
    }
  }
}
